"""Training objective (permutation-invariant SI-SNR) and evaluation metrics.

All scores are built from engine ops so the PIT loss is differentiable; for
metric reporting the scalar values are simply read out.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import nnops as N
from .errors import UsageError

EPS = 1e-8


@dataclass
class MetricReport:
    ident: str
    si_snr: float
    si_snri: float
    sdr: float
    sdri: float
    permutation: tuple


def _wav_tensor(x):
    if isinstance(x, N.Tensor):
        return x
    return N.Tensor(np.asarray(x, dtype=np.float64))


def si_snr(est, ref, eps=EPS):
    """Scale-invariant SNR in dB: both signals zero-meaned, ref-projection split."""
    est, ref = _wav_tensor(est), _wav_tensor(ref)
    if est.shape != ref.shape:
        raise UsageError(f"si_snr: length mismatch {est.shape} vs {ref.shape}")
    if not np.any(ref.data):
        raise UsageError("si_snr: reference signal is identically zero")
    e = N.sub(est, N.mean_all(est))
    r = N.sub(ref, N.mean_all(ref))
    rr = N.sum_all(N.mul(r, r))
    proj = N.div(N.sum_all(N.mul(e, r)), rr)
    s_t = N.mul(r, proj)
    noise = N.sub(e, s_t)
    # norm-ratio form: scale-invariant below the epsilon cap, finite everywhere
    num = N.sqrt(N.sum_all(N.mul(s_t, s_t)))
    den = N.add2(N.sqrt(N.sum_all(N.mul(noise, noise))), eps)
    return N.mul(N.log10(N.add2(N.div(num, den), eps)), 20.0)


def pit_loss(ests, refs):
    """Negative best-permutation mean SI-SNR; returns (loss, 1-based permutation)."""
    if len(ests) != len(refs):
        raise UsageError(f"pit_loss: {len(ests)} estimates vs {len(refs)} references")
    n = len(refs)
    best_score, best_perm = None, None
    for perm in permutations(range(n)):
        scores = [si_snr(ests[perm[i]], refs[i]) for i in range(n)]
        total = scores[0]
        for s in scores[1:]:
            total = N.add2(total, s)
        mean = N.mul(total, 1.0 / n)
        if best_score is None or mean.item() > best_score.item():
            best_score, best_perm = mean, perm
    loss = N.mul(best_score, -1.0)
    return loss, tuple(p + 1 for p in best_perm)


def si_snri(est, ref, mix):
    """SI-SNR improvement over scoring the mixture against the same reference."""
    return si_snr(est, ref).item() - si_snr(mix, ref).item()


def sdr(est, ref, eps=EPS):
    """Plain energy-ratio SDR in dB (no zero-meaning, no allowed filtering)."""
    est, ref = _wav_tensor(est), _wav_tensor(ref)
    if est.shape != ref.shape:
        raise UsageError(f"sdr: length mismatch {est.shape} vs {ref.shape}")
    if not np.any(ref.data):
        raise UsageError("sdr: reference signal is identically zero")
    num = float((ref.data**2).sum()) + eps
    den = float(((ref.data - est.data) ** 2).sum()) + eps
    return 10.0 * np.log10(num / den)


def sdri(est, ref, mix):
    return sdr(est, ref) - sdr(mix, ref)


def evaluate_pair(ests, refs, mix, ident=""):
    """Per-utterance metrics under the best PIT speaker assignment."""
    _, perm = pit_loss([_wav_tensor(e) for e in ests], [_wav_tensor(r) for r in refs])
    order = [p - 1 for p in perm]
    n = len(refs)
    vals_snr, vals_snri, vals_sdr, vals_sdri = [], [], [], []
    for i in range(n):
        e, r = ests[order[i]], refs[i]
        vals_snr.append(si_snr(e, r).item())
        vals_snri.append(si_snri(e, r, mix))
        vals_sdr.append(sdr(e, r))
        vals_sdri.append(sdri(e, r, mix))
    return MetricReport(
        ident=ident,
        si_snr=float(np.mean(vals_snr)),
        si_snri=float(np.mean(vals_snri)),
        sdr=float(np.mean(vals_sdr)),
        sdri=float(np.mean(vals_sdri)),
        permutation=perm,
    )


def format_metric_rows(reports):
    """One structured text row per utterance, plus a header."""
    lines = ["id,si_snr,si_snri,sdr,sdri,permutation"]
    for r in reports:
        perm = "-".join(str(p) for p in r.permutation)
        lines.append(f"{r.ident},{r.si_snr:.4f},{r.si_snri:.4f},{r.sdr:.4f},{r.sdri:.4f},{perm}")
    return "\n".join(lines)

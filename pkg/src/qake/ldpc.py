"""Quasi-cyclic LDPC code and a batched normalized min-sum decoder.

The code is defined by a grid of circulant blocks of size z: entry (R, C)
holds a shift s >= 0, meaning check row R*z+q touches variable C*z+(q+s)%z,
or -1 for an all-zero block.  Check rows are consumed in prefix order, so a
single matrix serves every syndrome length of the escalation ladder.

Decoding treats the syndrome bits as extra variable nodes (one identity
edge per check), which lets the same graph absorb syndromes that were
corrupted by XOR-masking with noisy data.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError

_LLR_CLIP = 40.0
_LLR_CLEAN = 38.0


@dataclass(frozen=True)
class QcLdpcCode:
    """Circulant grid plus an optional accumulator on the parity output.

    With accumulate=True the published syndrome is the running XOR of the
    raw parities, the same device as the double-diagonal parity core of
    5G-family base graphs.  Syndrome bits then enter the decoding graph as
    a degree-2 chain instead of isolated degree-1 leaves, which is what
    makes them recoverable when the mask carries channel noise.
    """

    z: int
    shifts: np.ndarray  # (block_rows, block_cols), int, -1 for zero block
    accumulate: bool = True

    @property
    def block_rows(self) -> int:
        return self.shifts.shape[0]

    @property
    def block_cols(self) -> int:
        return self.shifts.shape[1]

    @property
    def n_vars(self) -> int:
        return self.block_cols * self.z

    @property
    def n_checks(self) -> int:
        return self.block_rows * self.z

    def raw_parity(self, data: np.ndarray, n_check_bits: int) -> np.ndarray:
        if n_check_bits % self.z:
            raise DimensionError(f"check count {n_check_bits} not a multiple of z={self.z}")
        squeeze = data.ndim == 1
        x = np.atleast_2d(data)
        if x.shape[1] != self.n_vars:
            raise DimensionError(f"data length {x.shape[1]} != code n_vars {self.n_vars}")
        rows = n_check_bits // self.z
        out = np.zeros((x.shape[0], n_check_bits), dtype=np.uint8)
        for r in range(rows):
            acc = out[:, r * self.z : (r + 1) * self.z]
            for c in range(self.block_cols):
                s = self.shifts[r, c]
                if s < 0:
                    continue
                blk = x[:, c * self.z : (c + 1) * self.z]
                np.bitwise_xor(acc, np.roll(blk, -s, axis=1), out=acc)
        return out[0] if squeeze else out

    def syndrome(self, data: np.ndarray, n_check_bits: int) -> np.ndarray:
        """First n_check_bits published syndrome bits for the given data.

        data may be (n_vars,) or (batch, n_vars).  Prefixes are stable:
        syndrome(x, m1)[:m0] == syndrome(x, m0) for m0 <= m1.
        """
        raw = self.raw_parity(data, n_check_bits)
        if not self.accumulate:
            return raw
        return np.bitwise_xor.accumulate(raw, axis=raw.ndim - 1)


def _four_cycle_free(shifts, z, rows, cand, existing_cols):
    """Reject shift choices creating length-4 cycles between circulants."""
    pos = {r: i for i, r in enumerate(rows)}
    for other in existing_cols:
        shared = [r for r in rows if shifts[r, other] >= 0]
        for i in range(len(shared)):
            for j in range(i + 1, len(shared)):
                r1, r2 = shared[i], shared[j]
                d = (cand[pos[r1]] - shifts[r1, other]
                     - cand[pos[r2]] + shifts[r2, other]) % z
                if d == 0:
                    return False
    return True


def make_qc_code(
    z: int = 88,
    block_cols: int = 88,
    base_rows: int = 20,
    ext_rows: int = 20,
    col_weight_base: int = 4,
    col_weight_ext: int = 2,
    seed: int = 20240521,
) -> QcLdpcCode:
    """Construct a rate-matched QC-LDPC code deterministically from a seed.

    Default geometry: 7744 data bits, 1760 base parity bits growing in
    352-bit steps to 3520.  Block rows are load-balanced and circulant
    shifts are rejection-sampled to avoid 4-cycles where possible.
    """
    rng = np.random.default_rng(seed)
    total_rows = base_rows + ext_rows
    shifts = np.full((total_rows, block_cols), -1, dtype=np.int64)
    row_load = np.zeros(total_rows, dtype=np.int64)

    def pick_rows(lo, hi, k):
        # least-loaded rows first, ties broken randomly
        cand = np.arange(lo, hi)
        order = np.lexsort((rng.random(cand.size), row_load[cand]))
        return sorted(cand[order][:k].tolist())

    for col in range(block_cols):
        rows = pick_rows(0, base_rows, col_weight_base)
        rows += pick_rows(base_rows, total_rows, col_weight_ext)
        cand = rng.integers(0, z, size=len(rows))
        for _ in range(200):
            if _four_cycle_free(shifts, z, rows, cand, range(col)):
                break
            cand = rng.integers(0, z, size=len(rows))
        for r, s in zip(rows, cand):
            shifts[r, col] = int(s)
            row_load[r] += 1
    return QcLdpcCode(z=z, shifts=shifts)


def make_test_code(z: int = 88, block_cols: int = 88, rows: int = 40) -> QcLdpcCode:
    """Diagonal test code: syndrome block r simply repeats data block r.

    Trivially decodable, used for deterministic unit tests.
    """
    if rows > block_cols:
        raise ConfigError("test code needs rows <= block_cols")
    shifts = np.full((rows, block_cols), -1, dtype=np.int64)
    for r in range(rows):
        shifts[r, r] = 0
    return QcLdpcCode(z=z, shifts=shifts, accumulate=False)


class MinSumDecoder:
    """Normalized min-sum over the extended graph [H | I].

    Variables 0..n_vars-1 are data bits; variable n_vars+i is syndrome bit i.
    Decoding finds an assignment whose extended parity is zero, i.e.
    H . data = syndrome-variables, starting from per-bit channel LLRs.
    """

    def __init__(self, code: QcLdpcCode, n_check_bits: int, alpha: float = 0.8,
                 max_iters: int = 100):
        if n_check_bits % code.z or n_check_bits > code.n_checks:
            raise DimensionError(f"unsupported check count {n_check_bits}")
        self.code = code
        self.m = n_check_bits
        self.n_data = code.n_vars
        self.n_total = self.n_data + self.m
        self.alpha = alpha
        self.max_iters = max_iters

        z = code.z
        chk, var = [], []
        for r in range(n_check_bits // z):
            q = np.arange(z)
            for c in range(code.block_cols):
                s = code.shifts[r, c]
                if s < 0:
                    continue
                chk.append(r * z + q)
                var.append(c * z + (q + s) % z)
        allc = np.arange(n_check_bits)
        chk.append(allc)                               # check i sees syndrome var i
        var.append(self.n_data + allc)
        if code.accumulate:                            # and var i-1 through the chain
            chk.append(allc[1:])
            var.append(self.n_data + allc[1:] - 1)
        chk = np.concatenate(chk)
        var = np.concatenate(var)
        order = np.argsort(chk, kind="stable")
        self.edge_chk = chk[order]
        self.edge_var = var[order]
        self.n_edges = self.edge_chk.size
        self.chk_starts = np.searchsorted(self.edge_chk, np.arange(self.m))
        vorder = np.argsort(self.edge_var, kind="stable")
        self.var_order = vorder
        self.var_starts = np.searchsorted(self.edge_var[vorder], np.arange(self.n_total))

    def _scatter_var_sums(self, nu: np.ndarray) -> np.ndarray:
        sums = np.add.reduceat(nu[:, self.var_order], self.var_starts, axis=1)
        return sums

    def decode(self, llr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (hard decisions over all variables, converged mask).

        llr has shape (batch, n_total); positive values favor bit 0.
        Converged batch rows are compacted away so stragglers do not pay
        for the whole batch.
        """
        llr = np.atleast_2d(np.clip(llr, -_LLR_CLIP, _LLR_CLIP))
        nb = llr.shape[0]
        if llr.shape[1] != self.n_total:
            raise DimensionError(f"llr width {llr.shape[1]} != {self.n_total}")
        ec, es = self.edge_var, self.chk_starts
        hard = (llr < 0).astype(np.uint8)
        converged = self._parity_ok(hard)
        active = np.flatnonzero(~converged)
        llr_a = llr[active]
        mu = llr_a[:, ec].copy()
        for _ in range(self.max_iters):
            if active.size == 0:
                break
            sgn = np.where(mu < 0, -1.0, 1.0)
            mag = np.abs(mu)
            prod = np.multiply.reduceat(sgn, es, axis=1)
            min1 = np.minimum.reduceat(mag, es, axis=1)
            min1_e = min1[:, self.edge_chk]
            is_min = mag <= min1_e
            nmin = np.add.reduceat(is_min.astype(np.float64), es, axis=1)
            min2 = np.minimum.reduceat(np.where(is_min, np.inf, mag), es, axis=1)
            ext = np.where(
                is_min & (nmin[:, self.edge_chk] < 1.5),
                min2[:, self.edge_chk],
                min1_e,
            )
            np.clip(ext, None, _LLR_CLIP, out=ext)
            nu = self.alpha * prod[:, self.edge_chk] * sgn * ext
            post = llr_a + self._scatter_var_sums(nu)
            np.clip(post, -_LLR_CLIP, _LLR_CLIP, out=post)
            mu = post[:, ec] - nu
            new_hard = (post < 0).astype(np.uint8)
            ok = self._parity_ok(new_hard)
            hard[active] = new_hard
            if ok.any():
                converged[active[ok]] = True
                keep = ~ok
                active = active[keep]
                llr_a = llr_a[keep]
                mu = mu[keep]
        return hard, converged

    def _parity_ok(self, hard: np.ndarray) -> np.ndarray:
        par = np.add.reduceat(hard[:, self.edge_var].astype(np.int64), self.chk_starts, axis=1)
        return (par & 1).max(axis=1) == 0


@lru_cache(maxsize=8)
def default_code() -> QcLdpcCode:
    return make_qc_code()


_decoder_cache: dict[tuple, MinSumDecoder] = {}


def decoder_for(code: QcLdpcCode, n_check_bits: int, alpha: float = 0.8,
                max_iters: int = 100) -> MinSumDecoder:
    """Cached decoder lookup; codes are identified by their shift grid."""
    key = (code.z, code.shifts.tobytes(), n_check_bits, alpha, max_iters)
    dec = _decoder_cache.get(key)
    if dec is None:
        dec = MinSumDecoder(code, n_check_bits, alpha=alpha, max_iters=max_iters)
        if len(_decoder_cache) > 64:
            _decoder_cache.clear()
        _decoder_cache[key] = dec
    return dec


def channel_llr(bit_values: np.ndarray, flip_prob: float) -> np.ndarray:
    """LLR log(P(0)/P(1)) for observed bits under a BSC with the given prior."""
    p = min(max(flip_prob, 1e-12), 0.5 - 1e-12)
    mag = np.log((1.0 - p) / p)
    return (1.0 - 2.0 * bit_values.astype(np.float64)) * min(mag, _LLR_CLEAN)


def clean_llr(bit_values: np.ndarray) -> np.ndarray:
    return (1.0 - 2.0 * bit_values.astype(np.float64)) * _LLR_CLEAN

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from pmindex.domain.models.keys import Key, KeyType, string_key
from pmindex.domain.models.workload import MIXES, OpKind, Pattern, Workload, WorkloadOp, WorkloadSpec

# string keys draw their number below this bound (fits a uint64 draw)
_STRING_KEY_SPACE = 10**19


def split_streams(ops: Sequence[WorkloadOp], threads: int) -> list[list[WorkloadOp]]:
    """Static contiguous split, one stream per thread."""
    bounds = np.linspace(0, len(ops), threads + 1).astype(int)
    return [list(ops[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


class WorkloadService:
    """Deterministic YCSB-style op streams and crash-campaign sequences."""

    def unique_keys(
        self,
        key_type: KeyType,
        n: int,
        rng: np.random.Generator,
        *,
        key_bits: int = 64,
        alphabet: int = 0,
        exclude: Iterable[Key] = (),
    ) -> list[Key]:
        if n <= 0:
            return []
        key_type = KeyType(key_type)
        if key_type is KeyType.STRING:
            high = _STRING_KEY_SPACE
        elif alphabet:
            high = alphabet**8
        else:
            high = 1 << key_bits
        banned = set(exclude)
        if n + len(banned) >= high - 1:
            raise ValueError(f"cannot draw {n} distinct keys below 2^{key_bits}")
        out = np.empty(0, dtype=np.uint64)
        while len(out) < n:
            draw = rng.integers(1, high, size=2 * (n - len(out)) + 16, dtype=np.uint64)
            merged = np.concatenate([out, draw])
            _, first = np.unique(merged, return_index=True)
            out = merged[np.sort(first)]
            if banned:
                encoded = [self._encode(key_type, int(x), alphabet) for x in out]
                out = out[np.array([k not in banned for k in encoded], dtype=bool)]
        raw = [int(x) for x in out[:n]]
        return [self._encode(key_type, x, alphabet) for x in raw]

    @staticmethod
    def _encode(key_type: KeyType, x: int, alphabet: int = 0) -> Key:
        if key_type is KeyType.STRING:
            return string_key(x)
        if not alphabet:
            return x
        # eight base-``alphabet`` digits, each spread over the byte range
        step = 255 // (alphabet - 1)
        key = 0
        for shift in range(7, -1, -1):
            key = (key << 8) | ((x // alphabet**shift) % alphabet) * step
        return key

    @staticmethod
    def values(rng: np.random.Generator, n: int) -> list[int]:
        return [int(v) for v in rng.integers(1, 1 << 63, size=n, dtype=np.uint64)]

    # ------------------------------------------------------------------ benchmark workloads
    def generate(self, spec: WorkloadSpec) -> Workload:
        rng = np.random.default_rng(spec.seed)
        read, ins, _ = MIXES[spec.pattern]
        n = spec.n
        if spec.pattern is Pattern.LOADA:
            keys = self.unique_keys(spec.key_type, n, rng)
            vals = self.values(rng, n)
            ops = [WorkloadOp(OpKind.INSERT, k, v, ordinal=i) for i, (k, v) in enumerate(zip(keys, vals))]
            return Workload(spec, load=[[] for _ in range(spec.threads)], run=split_streams(ops, spec.threads))

        n_ins = int(round(n * ins))
        n_read = int(round(n * read))
        n_scan = n - n_ins - n_read
        keys = self.unique_keys(spec.key_type, n + n_ins, rng)
        vals = self.values(rng, n + n_ins)
        loaded, fresh = keys[:n], keys[n:]
        load_ops = [WorkloadOp(OpKind.INSERT, k, v, ordinal=i) for i, (k, v) in enumerate(zip(loaded, vals[:n]))]

        kinds = np.array([0] * n_read + [1] * n_ins + [2] * n_scan)
        kinds = rng.permutation(kinds)
        ordered = sorted(loaded)  # type: ignore[type-var]
        picks = rng.integers(0, n, size=n)
        lengths = rng.integers(1, spec.scan_len_max + 1, size=n)
        run_ops: list[WorkloadOp] = []
        next_fresh = 0
        for i, kind in enumerate(kinds):
            if kind == 0:
                run_ops.append(WorkloadOp(OpKind.LOOKUP, loaded[int(picks[i])], ordinal=i))
            elif kind == 1:
                run_ops.append(WorkloadOp(OpKind.INSERT, fresh[next_fresh], vals[n + next_fresh], ordinal=i))
                next_fresh += 1
            else:
                pos = int(picks[i])
                end = ordered[min(pos + int(lengths[i]) - 1, n - 1)]
                run_ops.append(WorkloadOp(OpKind.SCAN, ordered[pos], end_key=end, ordinal=i))
        return Workload(spec, load=split_streams(load_ops, spec.threads), run=split_streams(run_ops, spec.threads))

    # ------------------------------------------------------------------ crash campaigns
    def crash_load_ops(
        self,
        n: int,
        rng: np.random.Generator,
        *,
        key_type: KeyType = KeyType.RANDINT,
        key_bits: int = 64,
        alphabet: int = 0,
        delete_fraction: float = 0.0,
    ) -> list[WorkloadOp]:
        """Inserts of fresh keys, with a fraction of deletes of keys inserted earlier."""
        keys = self.unique_keys(key_type, n, rng, key_bits=key_bits, alphabet=alphabet)
        vals = self.values(rng, n)
        coins = rng.random(n)
        picks = rng.random(n)
        live: list[Key] = []
        ops: list[WorkloadOp] = []
        next_key = 0
        for i in range(n):
            if live and coins[i] < delete_fraction:
                j = int(picks[i] * len(live))
                live[j], live[-1] = live[-1], live[j]
                ops.append(WorkloadOp(OpKind.DELETE, live.pop(), ordinal=i))
            else:
                k = keys[next_key]
                ops.append(WorkloadOp(OpKind.INSERT, k, vals[next_key], ordinal=i))
                live.append(k)
                next_key += 1
        return ops

    def crash_test_ops(
        self,
        n: int,
        rng: np.random.Generator,
        known: Sequence[Key],
        *,
        key_type: KeyType = KeyType.RANDINT,
        key_bits: int = 64,
        alphabet: int = 0,
        exclude: Iterable[Key] = (),
    ) -> list[WorkloadOp]:
        """Half inserts of fresh keys, half reads of ``known`` keys (all inserts when nothing is known)."""
        n_read = n // 2 if known else 0
        fresh = self.unique_keys(key_type, n - n_read, rng, key_bits=key_bits, alphabet=alphabet, exclude=exclude)
        vals = self.values(rng, len(fresh))
        ops = [WorkloadOp(OpKind.INSERT, k, v, ordinal=i) for i, (k, v) in enumerate(zip(fresh, vals))]
        if n_read:
            picks = rng.integers(0, len(known), size=n_read)
            ops += [WorkloadOp(OpKind.LOOKUP, known[int(p)], ordinal=len(fresh) + i) for i, p in enumerate(picks)]
        order = rng.permutation(len(ops))
        return [ops[int(i)] for i in order]

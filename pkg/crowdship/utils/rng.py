# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import zlib

import numpy as np

__all__ = ["STREAM_NAMES", "RandomStreams"]

# Order matters: each name maps to a fixed child of the root SeedSequence
STREAM_NAMES = ("traces", "tasks", "incidents", "decisions", "training", "deadlines", "negotiation")


def _key(value: str | int) -> int:
    # str hashes are salted per process, CRC-32 is not
    return zlib.crc32(value.encode("utf-8")) if isinstance(value, str) else int(value)


class RandomStreams:
    """
    Independent, named random generators derived from a single seed.

    Every stream is a child of the same `numpy.random.SeedSequence`, so a stream's draws
    only depend on the seed and on how often that stream itself was used. Runs that differ
    in strategy but share a seed therefore see identical traces and tasks.

    Draws that belong to one entity, such as the incident trials of one courier delivering one
    task, come from `keyed` generators, which do not depend on any order of use.

    Args:
        seed: int: The root seed
    """

    def __init__(self, seed: int):
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
        self._streams = {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}

    def __getitem__(self, name: str) -> np.random.Generator:
        try:
            return self._streams[name]
        except KeyError:
            raise KeyError(f"Unknown random stream '{name}', expected one of {STREAM_NAMES}") from None

    def keyed(self, name: str, *keys: str | int) -> np.random.Generator:
        """
        A fresh generator that only depends on the seed, the stream name and the keys.

        Args:
            name: str: The stream the generator belongs to
            *keys: str | int: Entity ids or whole seconds

        Returns:
            np.random.Generator: Generators built from equal arguments produce equal draws
        """
        if name not in self._streams:
            raise KeyError(f"Unknown random stream '{name}', expected one of {STREAM_NAMES}")
        spawn_key = (STREAM_NAMES.index(name), *(_key(k) for k in keys))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=spawn_key))

    @property
    def traces(self) -> np.random.Generator:
        return self._streams["traces"]

    @property
    def tasks(self) -> np.random.Generator:
        return self._streams["tasks"]

    @property
    def incidents(self) -> np.random.Generator:
        return self._streams["incidents"]

    @property
    def decisions(self) -> np.random.Generator:
        return self._streams["decisions"]

    @property
    def training(self) -> np.random.Generator:
        return self._streams["training"]

    @property
    def deadlines(self) -> np.random.Generator:
        return self._streams["deadlines"]

    @property
    def negotiation(self) -> np.random.Generator:
        return self._streams["negotiation"]

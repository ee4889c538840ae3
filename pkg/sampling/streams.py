"""
시드 기반 난수 스트림

(seed, key...) 조합마다 서로 독립이고 재현 가능한 Generator 를 돌려줍니다.
작업자/배치/반복마다 다른 key 를 주면 병렬 실행 순서와 무관하게 같은 결과가 나옵니다.
"""

import hashlib
from typing import Tuple, Union

import numpy as np

StreamKey = Union[int, str]


def _key_to_int(part: StreamKey) -> int:
    if isinstance(part, bool):
        raise TypeError("스트림 키에 bool 은 사용할 수 없습니다")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"스트림 키는 음수가 될 수 없습니다: {part}")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def spawn_key(*key: StreamKey) -> Tuple[int, ...]:
    return tuple(_key_to_int(part) for part in key)


def make_stream(seed: int, *key: StreamKey) -> np.random.Generator:
    """
    seed 와 key 경로로 Generator 생성

    Args:
        seed: 실행 시드 (필수, 0 이상 정수)
        *key: 스트림 경로 (예: "benchmark", "regular:360:6", "md-var", 3)

    Returns:
        np.random.Generator: PCG64 기반 독립 스트림
    """
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed 는 0 이상의 정수여야 합니다: {seed!r}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*key))
    return np.random.default_rng(sequence)

"""
可重現的亂數串流

所有隨機性都從單一主種子衍生，使用計數器型 (counter-based) 的 Philox 產生器，
跨平台結果一致，且兩個網路通道可以各自取得獨立的串流。
"""

from typing import List

import numpy as np

# channel_stream 的通道索引
SENSOR_STREAM = 0
ACTUATOR_STREAM = 1

# 串流用途編號，混入 SeedSequence 的 spawn_key
GA_STREAM = 2
SEED_STREAM = 3


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """
    由主種子與用途編號建立獨立的亂數產生器

    Args:
        seed (int): 64 位元無號主種子
        *key (int): 用途編號，不同編號得到統計上獨立的串流

    Returns:
        np.random.Generator: Philox 產生器
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(sequence))


def channel_stream(seed: int, rng_stream: int, channel_index: int) -> np.random.Generator:
    """網路通道專用串流（sensor→controller 為 0，controller→actuator 為 1）"""
    return make_stream(seed, rng_stream, channel_index)


def derive_seeds(seed: int, count: int, purpose: int = 0) -> List[int]:
    """
    從主種子衍生一組 64 位元種子

    GA 的共同隨機數 (CRN) 評估種子與樣本外驗證種子都由此產生，
    purpose 不同則兩組種子互不重疊。
    """
    generator = make_stream(seed, SEED_STREAM, purpose)
    values = generator.integers(0, 2**64 - 1, size=count, dtype=np.uint64, endpoint=True)
    return [int(v) for v in values]

"""
GA 調整模組

以實數編碼基因演算法最小化隨機目標函數，搜尋 PI 增益 (kp, ki)。

主要特點：
- 共同隨機數 (CRN)：整個執行過程使用同一組 M 個網路種子評估所有個體，
  使隨機目標函數變成確定的樣本平均，每代最佳值可嚴格保證不增
- 錦標賽選擇（大小 2）、BLX-α 混合交配、高斯突變並裁切至搜尋範圍、菁英保留
- 適應度評估可用多個程序平行執行，結果依個體索引順序彙整
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ChannelConfig, GaConfig, ObjectiveWeights, PiGains, PlantParams, SimConfig, get_settings
from .objective import objective
from .rng import GA_STREAM, derive_seeds, make_stream
from .simulation import run_closed_loop

logger = logging.getLogger(__name__)

# derive_seeds 的用途編號
EVAL_SEEDS = 0
VALIDATION_SEEDS = 1

FitnessFn = Callable[[PiGains], float]


@dataclass
class GenerationStats:
    """單一世代的統計"""
    generation: int
    best_J: float
    mean_J: float
    best_kp: float
    best_ki: float


@dataclass
class TuneResult:
    """
    GA 調整結果

    Attributes:
        best_gains (PiGains): 最佳增益
        best_J (float): 最佳增益的樣本內成本
        history (List[GenerationStats]): 第 0 代到最後一代的統計
        eval_seeds (List[int]): 評估用的 M 個網路種子
    """
    best_gains: PiGains
    best_J: float
    history: List[GenerationStats] = field(default_factory=list)
    eval_seeds: List[int] = field(default_factory=list)


def evaluate_fitness(gains: PiGains, plant: PlantParams, chan_cfg: ChannelConfig, sim: SimConfig,
                     w: ObjectiveWeights, eval_seeds: Sequence[int]) -> float:
    """
    以共同隨機數評估一組增益

    Args:
        gains (PiGains): 待評估的增益
        plant (PlantParams): 受控體參數
        chan_cfg (ChannelConfig): 通道配置
        sim (SimConfig): 模擬配置（seed 會被 eval_seeds 取代）
        w (ObjectiveWeights): 目標函數權重
        eval_seeds (Sequence[int]): 整個 GA 執行固定不變的 M 個種子

    Returns:
        float: M 次模擬的平均成本；發散的模擬貢獻懲罰值
    """
    total = 0.0
    for seed in eval_seeds:
        run_sim = SimConfig(Ts=sim.Ts, tick_divisor=sim.tick_divisor, horizon=sim.horizon,
                            setpoint=sim.setpoint, seed=seed, divergence_limit=sim.divergence_limit)
        trace, _ = run_closed_loop(plant, gains, chan_cfg, run_sim)
        total += objective(trace, w)
    return total / len(eval_seeds)


def _evaluate_pair(pair: Tuple[float, float], plant: PlantParams, chan_cfg: ChannelConfig,
                   sim: SimConfig, w: ObjectiveWeights, eval_seeds: Tuple[int, ...]) -> float:
    return evaluate_fitness(PiGains(kp=pair[0], ki=pair[1]), plant, chan_cfg, sim, w, eval_seeds)


class FitnessCache:
    """
    個體適應度快取

    CRN 下同一組增益的成本固定，菁英個體不需重新模擬。
    """

    def __init__(self, fitness: Callable[[Tuple[float, float]], float], workers: int = 1):
        self._fitness = fitness
        self._workers = workers
        self._values: Dict[Tuple[float, float], float] = {}
        self.evaluations = 0

    def evaluate(self, population: np.ndarray) -> np.ndarray:
        pairs = [(float(kp), float(ki)) for kp, ki in population]
        missing = list(dict.fromkeys(p for p in pairs if p not in self._values))
        if missing:
            if self._workers > 1 and len(missing) > 1:
                with ProcessPoolExecutor(max_workers=self._workers) as executor:
                    results = list(executor.map(self._fitness, missing))
            else:
                results = [self._fitness(p) for p in missing]
            for pair, value in zip(missing, results):
                self._values[pair] = float(value)
            self.evaluations += len(missing)
        return np.array([self._values[p] for p in pairs], dtype=float)


def _tournament(rng: np.random.Generator, fitness: np.ndarray) -> int:
    a, b = rng.integers(0, len(fitness), size=2)
    return int(a) if fitness[a] <= fitness[b] else int(b)


def _blend(rng: np.random.Generator, p1: np.ndarray, p2: np.ndarray, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """BLX-α 交配：子代均勻落在父代區間向兩側延伸 α 倍的範圍內"""
    low = np.minimum(p1, p2)
    high = np.maximum(p1, p2)
    spread = (high - low) * alpha
    c1 = rng.uniform(low - spread, high + spread)
    c2 = rng.uniform(low - spread, high + spread)
    return c1, c2


def _mutate(rng: np.random.Generator, child: np.ndarray, sigma: np.ndarray, prob: float) -> np.ndarray:
    mask = rng.random(child.shape) < prob
    return child + mask * rng.normal(0.0, 1.0, child.shape) * sigma


def run_ga(fitness: Callable[[Tuple[float, float]], float], ga_cfg: GaConfig,
           workers: int = 1) -> Tuple[np.ndarray, float, List[GenerationStats]]:
    """
    GA 主迴圈（與模擬器無關，可注入任意適應度函數）

    Args:
        fitness: (kp, ki) → 成本，越小越好
        ga_cfg (GaConfig): GA 配置
        workers (int): 平行評估的程序數（fitness 必須可被 pickle）

    Returns:
        Tuple[np.ndarray, float, List[GenerationStats]]: 最佳個體、最佳成本、世代統計
    """
    rng = make_stream(ga_cfg.master_seed, GA_STREAM)
    kp_min, kp_max, ki_min, ki_max = ga_cfg.bounds
    low = np.array([kp_min, ki_min])
    high = np.array([kp_max, ki_max])
    sigma = ga_cfg.mutation_std * (high - low)
    cache = FitnessCache(fitness, workers)

    population = rng.uniform(low, high, size=(ga_cfg.pop_size, 2))
    scores = cache.evaluate(population)
    history = [_stats(0, population, scores)]
    logger.info(f"第 0 代：最佳 J={history[-1].best_J:.6g}，平均 J={history[-1].mean_J:.6g}")

    for generation in range(1, ga_cfg.generations + 1):
        order = np.argsort(scores, kind="stable")
        offspring = [population[i].copy() for i in order[:ga_cfg.elitism_count]]

        while len(offspring) < ga_cfg.pop_size:
            p1 = population[_tournament(rng, scores)]
            p2 = population[_tournament(rng, scores)]
            if rng.random() < ga_cfg.crossover_prob:
                c1, c2 = _blend(rng, p1, p2, ga_cfg.blend_alpha)
            else:
                c1, c2 = p1.copy(), p2.copy()
            for child in (c1, c2):
                if len(offspring) < ga_cfg.pop_size:
                    child = _mutate(rng, child, sigma, ga_cfg.mutation_prob)
                    offspring.append(np.clip(child, low, high))

        population = np.array(offspring)
        scores = cache.evaluate(population)
        history.append(_stats(generation, population, scores))
        logger.info(f"第 {generation} 代：最佳 J={history[-1].best_J:.6g}，平均 J={history[-1].mean_J:.6g}")

    best = int(np.argmin(scores))
    logger.info(f"GA 完成，共 {cache.evaluations} 次適應度評估")
    return population[best], float(scores[best]), history


def _stats(generation: int, population: np.ndarray, scores: np.ndarray) -> GenerationStats:
    best = int(np.argmin(scores))
    return GenerationStats(
        generation=generation,
        best_J=float(scores[best]),
        mean_J=float(np.mean(scores)),
        best_kp=float(population[best][0]),
        best_ki=float(population[best][1]),
    )


def ga_tune(plant: PlantParams, chan_cfg: ChannelConfig, sim: SimConfig, w: ObjectiveWeights,
            ga_cfg: GaConfig, fitness: Optional[FitnessFn] = None) -> TuneResult:
    """
    以 GA 調整 PI 增益

    Args:
        plant (PlantParams): 受控體參數
        chan_cfg (ChannelConfig): 通道配置
        sim (SimConfig): 模擬配置
        w (ObjectiveWeights): 目標函數權重
        ga_cfg (GaConfig): GA 配置
        fitness (Optional[FitnessFn]): 取代模擬器的適應度函數（測試用代理函數）

    Returns:
        TuneResult: 最佳增益、樣本內成本、世代歷史與評估種子

    功能說明：
    - 由 master_seed 衍生 M 個評估種子，整個執行固定不變
    - 相同的 GaConfig 一定得到相同的結果
    """
    eval_seeds = derive_seeds(ga_cfg.master_seed, ga_cfg.realizations, EVAL_SEEDS)
    workers = ga_cfg.workers or get_settings().workers

    if fitness is None:
        pair_fitness = partial(_evaluate_pair, plant=plant, chan_cfg=chan_cfg, sim=sim, w=w,
                               eval_seeds=tuple(eval_seeds))
    else:
        pair_fitness = lambda pair: fitness(PiGains(kp=pair[0], ki=pair[1]))
        workers = 1

    logger.info(f"開始 GA 調整：族群 {ga_cfg.pop_size}、{ga_cfg.generations} 代、"
                f"每次評估 {ga_cfg.realizations} 個網路實現、{workers} 個程序")
    best, best_J, history = run_ga(pair_fitness, ga_cfg, workers)
    return TuneResult(
        best_gains=PiGains(kp=float(best[0]), ki=float(best[1])),
        best_J=best_J,
        history=history,
        eval_seeds=eval_seeds,
    )


def validation_seeds(ga_cfg: GaConfig) -> List[int]:
    """樣本外驗證用的新種子（與評估種子不重疊）"""
    return derive_seeds(ga_cfg.master_seed, ga_cfg.validation_seeds, VALIDATION_SEEDS)

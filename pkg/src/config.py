"""
NCS Testbed 配置管理模組

此模組負責管理測試平台的所有配置設定，包括：
- 各模組的領域配置類別（受控體、控制器、網路通道、模擬、目標函數、GA、即時節點）
- 環境變數管理（日誌等級、平行運算數、輸出目錄）
- JSON 執行配置檔的讀取、驗證與回寫
"""

import os
import json
import math
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Dict, Any, List, Literal, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

# 載入環境變數
load_dotenv()

logger = logging.getLogger(__name__)

# 64 位元無號整數上限（種子範圍）
U64_MAX = 2**64 - 1

DELAY_KINDS = ("constant", "uniform", "truncated_exponential")


class ConfigError(ValueError):
    """
    配置驗證錯誤

    Attributes:
        field (str): 出錯欄位的路徑，例如 "sim.Ts"
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _finite(value: float) -> bool:
    return isinstance(value, (int, float)) and math.isfinite(value)


def _is_multiple(value: float, step: float, tol: float = 1e-9) -> bool:
    """檢查 value 是否為 step 的整數倍（容許浮點誤差）"""
    ratio = value / step
    return abs(ratio - round(ratio)) <= tol * max(1.0, abs(ratio))


@dataclass
class PlantParams:
    """
    FOPTD 受控體參數

    P(s) = K·e^{-Ls} / (T·s + 1)，預設為平衡型延遲受控體 K=5, T=1.5, L=1。
    """
    K: float = 5.0
    T: float = 1.5
    L: float = 1.0

    def __post_init__(self):
        if not _finite(self.K):
            raise ConfigError("plant.K", "增益必須為有限值")
        if not _finite(self.T) or self.T <= 0:
            raise ConfigError("plant.T", "時間常數必須大於 0")
        if not _finite(self.L) or self.L < 0:
            raise ConfigError("plant.L", "延遲時間不能為負數")


@dataclass(frozen=True)
class PiGains:
    """並聯式 PI 控制器增益 (kp, ki)"""
    kp: float = 0.0
    ki: float = 0.0

    def __post_init__(self):
        if not _finite(self.kp):
            raise ConfigError("controller.kp", "比例增益必須為有限值")
        if not _finite(self.ki):
            raise ConfigError("controller.ki", "積分增益必須為有限值")


@dataclass
class SimConfig:
    """
    模擬引擎配置

    Attributes:
        Ts (float): 控制週期（秒）
        tick_divisor (int): 每個控制週期的積分步數
        horizon (float): 模擬總時間（秒），須為 Ts 的整數倍
        setpoint (float): 參考輸入幅度
        seed (int): 網路通道亂數種子（64 位元無號整數）
        divergence_limit (float): |y| 或 |u| 超過此值即視為發散
    """
    Ts: float = 0.1
    tick_divisor: int = 10
    horizon: float = 30.0
    setpoint: float = 1.0
    seed: int = 0
    divergence_limit: float = 1e4

    def __post_init__(self):
        if not _finite(self.Ts) or self.Ts <= 0:
            raise ConfigError("sim.Ts", "控制週期必須大於 0")
        if isinstance(self.tick_divisor, bool) or not isinstance(self.tick_divisor, int) or self.tick_divisor < 1:
            raise ConfigError("sim.tick_divisor", "每週期步數必須是 >= 1 的整數")
        if not _finite(self.horizon) or self.horizon < self.Ts:
            raise ConfigError("sim.horizon", "模擬時間必須 >= Ts")
        if not _is_multiple(self.horizon, self.Ts):
            raise ConfigError("sim.horizon", "模擬時間必須是 Ts 的整數倍")
        if not _finite(self.setpoint):
            raise ConfigError("sim.setpoint", "設定值必須為有限值")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not (0 <= self.seed <= U64_MAX):
            raise ConfigError("sim.seed", "種子必須是 64 位元無號整數")
        if not (self.divergence_limit > 0):
            raise ConfigError("sim.divergence_limit", "發散門檻必須大於 0")

    @property
    def tick(self) -> float:
        """積分步長 tick = Ts / tick_divisor"""
        return self.Ts / self.tick_divisor

    @property
    def n_periods(self) -> int:
        """控制週期數 N = horizon / Ts（軌跡共有 N + 1 列）"""
        return int(round(self.horizon / self.Ts))


@dataclass
class DelayModel:
    """
    封包延遲分佈模型

    params 依 kind 而定：
    - constant: {"value": d}
    - uniform: {"low": a, "high": b}（預設 [0, d_max]）
    - truncated_exponential: {"mean": m}（預設 d_max / 3），截斷於 [0, d_max]
    """
    kind: str = "uniform"
    params: Dict[str, float] = field(default_factory=dict)
    d_max: float = 0.3

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ConfigError("channel.delay.kind", f"延遲模型必須是 {', '.join(DELAY_KINDS)} 之一")
        if not _finite(self.d_max) or self.d_max < 0:
            raise ConfigError("channel.delay.d_max", "延遲上限不能為負數")

        allowed = {
            "constant": {"value"},
            "uniform": {"low", "high"},
            "truncated_exponential": {"mean"},
        }[self.kind]
        unknown = set(self.params) - allowed
        if unknown:
            raise ConfigError("channel.delay.params", f"未知的參數: {sorted(unknown)}")
        for key, value in self.params.items():
            if not _finite(value):
                raise ConfigError(f"channel.delay.params.{key}", "參數必須為有限值")

        if self.kind == "constant":
            value = self.params.get("value", 0.0)
            if not (0 <= value <= self.d_max):
                raise ConfigError("channel.delay.params.value", "固定延遲必須介於 [0, d_max]")
        elif self.kind == "uniform":
            low, high = self.bounds()
            if not (0 <= low <= high <= self.d_max):
                raise ConfigError("channel.delay.params", "均勻分佈必須滿足 0 <= low <= high <= d_max")
        else:
            if self.mean() <= 0 and self.d_max > 0:
                raise ConfigError("channel.delay.params.mean", "指數分佈平均值必須大於 0")

    def bounds(self) -> Tuple[float, float]:
        """均勻分佈的上下界"""
        return self.params.get("low", 0.0), self.params.get("high", self.d_max)

    def mean(self) -> float:
        """截斷指數分佈的（未截斷）平均值"""
        return self.params.get("mean", self.d_max / 3.0)


@dataclass
class ChannelConfig:
    """
    網路通道配置

    Attributes:
        drop_prob (float): 封包遺失機率 [0, 1]
        delay (DelayModel): 延遲分佈與上限
        ooo_buffer_cap (int): 亂序過濾緩衝區容量（封包數）
        rng_stream (int): 混入通道亂數串流的額外種子材料
    """
    drop_prob: float = 0.1
    delay: DelayModel = field(default_factory=DelayModel)
    ooo_buffer_cap: int = 1000
    rng_stream: int = 0

    def __post_init__(self):
        if not _finite(self.drop_prob) or not (0.0 <= self.drop_prob <= 1.0):
            raise ConfigError("channel.drop_prob", "遺失機率必須介於 0 與 1 之間")
        if isinstance(self.ooo_buffer_cap, bool) or not isinstance(self.ooo_buffer_cap, int) or self.ooo_buffer_cap < 1:
            raise ConfigError("channel.ooo_buffer_cap", "緩衝區容量必須 >= 1")
        if not isinstance(self.rng_stream, int) or self.rng_stream < 0:
            raise ConfigError("channel.rng_stream", "亂數串流編號必須是非負整數")

    @classmethod
    def ideal(cls) -> "ChannelConfig":
        """無遺失、零延遲的理想通道"""
        return cls(drop_prob=0.0, delay=DelayModel(kind="constant", params={"value": 0.0}, d_max=0.0))


@dataclass
class ObjectiveWeights:
    """ITAE 與 ISCO 的權重，預設兩者相同"""
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if not _finite(self.w1) or self.w1 < 0:
            raise ConfigError("objective.w1", "權重不能為負數")
        if not _finite(self.w2) or self.w2 < 0:
            raise ConfigError("objective.w2", "權重不能為負數")
        if self.w1 + self.w2 <= 0:
            raise ConfigError("objective.w1", "w1 + w2 必須大於 0")


@dataclass
class GaConfig:
    """
    實數編碼基因演算法配置

    bounds 依序為 (kp_min, kp_max, ki_min, ki_max)。
    """
    pop_size: int = 20
    generations: int = 30
    bounds: Tuple[float, float, float, float] = (0.0, 2.0, 0.0, 2.0)
    crossover_prob: float = 0.9
    mutation_std: float = 0.1
    mutation_prob: float = 0.2
    blend_alpha: float = 0.5
    elitism_count: int = 2
    realizations: int = 4
    master_seed: int = 0
    validation_seeds: int = 10
    workers: Optional[int] = None

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        if self.pop_size < 2:
            raise ConfigError("ga.pop_size", "族群大小必須 >= 2")
        if self.generations < 0:
            raise ConfigError("ga.generations", "世代數不能為負數")
        if len(self.bounds) != 4 or not all(_finite(b) for b in self.bounds):
            raise ConfigError("ga.bounds", "搜尋範圍必須是四個有限值")
        kp_min, kp_max, ki_min, ki_max = self.bounds
        if not kp_min < kp_max:
            raise ConfigError("ga.kp_min", "kp_min 必須小於 kp_max")
        if not ki_min < ki_max:
            raise ConfigError("ga.ki_min", "ki_min 必須小於 ki_max")
        if not (0.0 <= self.crossover_prob <= 1.0):
            raise ConfigError("ga.crossover_prob", "交配機率必須介於 0 與 1 之間")
        if not (0.0 <= self.mutation_prob <= 1.0):
            raise ConfigError("ga.mutation_prob", "突變機率必須介於 0 與 1 之間")
        if not _finite(self.mutation_std) or self.mutation_std < 0:
            raise ConfigError("ga.mutation_std", "突變標準差不能為負數")
        if not _finite(self.blend_alpha) or self.blend_alpha < 0:
            raise ConfigError("ga.blend_alpha", "BLX-α 不能為負數")
        if not (1 <= self.elitism_count <= self.pop_size):
            raise ConfigError("ga.elitism_count", "菁英數量必須介於 1 與族群大小之間")
        if self.realizations < 1:
            raise ConfigError("ga.realizations", "每次評估的網路實現數必須 >= 1")
        if not (0 <= self.master_seed <= U64_MAX):
            raise ConfigError("ga.master_seed", "種子必須是 64 位元無號整數")
        if self.validation_seeds < 1:
            raise ConfigError("ga.validation_seeds", "驗證種子數必須 >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("ga.workers", "平行程序數必須 >= 1")


def _parse_endpoint(value: str, name: str) -> Tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigError(name, "端點格式必須是 host:port")
    try:
        port_number = int(port)
    except ValueError:
        raise ConfigError(name, f"埠號不是整數: {port}")
    if not (0 <= port_number <= 65535):
        raise ConfigError(name, "埠號必須介於 0 與 65535 之間")
    return host, port_number


@dataclass
class NodeConfig:
    """
    即時節點配置

    Attributes:
        bind (str): 本地綁定端點 "host:port"
        peer (str): 對方節點端點 "host:port"
        role (str): "plant_master" 或 "controller_slave"
        sync_timeout (float): 每週期等待對方的牆鐘時間上限（秒）
        pacing (bool): 是否以真實 Ts 節拍推進
    """
    bind: str = "127.0.0.1:47001"
    peer: str = "127.0.0.1:47002"
    role: str = "plant_master"
    sync_timeout: float = 1.0
    pacing: bool = True
    plant: PlantParams = field(default_factory=PlantParams)
    gains: PiGains = field(default_factory=PiGains)
    sim: SimConfig = field(default_factory=SimConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)

    def __post_init__(self):
        if self.role not in ("plant_master", "controller_slave"):
            raise ConfigError("rt.role", "角色必須是 plant_master 或 controller_slave")
        if not _finite(self.sync_timeout) or self.sync_timeout <= 0:
            raise ConfigError("rt.sync_timeout", "同步逾時必須大於 0")
        if self.bind_address == self.peer_address:
            raise ConfigError("rt.peer", "本地端點與對方端點不能相同")

    @property
    def bind_address(self) -> Tuple[str, int]:
        return _parse_endpoint(self.bind, "rt.bind")

    @property
    def peer_address(self) -> Tuple[str, int]:
        return _parse_endpoint(self.peer, "rt.peer")


# ============================================================================
# JSON 執行配置檔（pydantic 結構描述）
# ============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantSection(_Section):
    K: float = 5.0
    T: float = 1.5
    L: float = 1.0


class ControllerSection(_Section):
    kp: float = 0.0
    ki: float = 0.0


class SimSection(_Section):
    Ts: float = 0.1
    tick_divisor: int = 10
    horizon: float = 30.0
    setpoint: float = 1.0
    seed: int = 0
    divergence_limit: float = 1e4


class DelaySection(_Section):
    kind: Literal["constant", "uniform", "truncated_exponential"] = "uniform"
    params: Dict[str, float] = Field(default_factory=dict)
    d_max: float = 0.3


class ChannelSection(_Section):
    drop_prob: float = 0.1
    delay: DelaySection = Field(default_factory=DelaySection)
    ooo_buffer_cap: int = 1000
    rng_stream: int = 0


class ObjectiveSection(_Section):
    w1: float = 1.0
    w2: float = 1.0


class GaSection(_Section):
    pop_size: int = 20
    generations: int = 30
    kp_min: float = 0.0
    kp_max: float = 2.0
    ki_min: float = 0.0
    ki_max: float = 2.0
    crossover_prob: float = 0.9
    mutation_std: float = 0.1
    mutation_prob: float = 0.2
    blend_alpha: float = 0.5
    elitism_count: int = 2
    realizations: int = 4
    master_seed: int = 0
    validation_seeds: int = 10
    workers: Optional[int] = None


class RtSection(_Section):
    bind: str = "127.0.0.1:47001"
    peer: str = "127.0.0.1:47002"
    role: Literal["plant_master", "controller_slave"] = "plant_master"
    sync_timeout: float = 1.0
    pacing: bool = True


class SweepSection(_Section):
    drop_probs: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.3])
    seeds: int = 10


class RunConfig(_Section):
    """
    JSON 執行配置檔的完整結構

    未知的欄位一律拒絕；缺少的欄位使用預設值。
    """
    plant: PlantSection = Field(default_factory=PlantSection)
    controller: ControllerSection = Field(default_factory=ControllerSection)
    sim: SimSection = Field(default_factory=SimSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    objective: ObjectiveSection = Field(default_factory=ObjectiveSection)
    ga: GaSection = Field(default_factory=GaSection)
    rt: RtSection = Field(default_factory=RtSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def plant_params(self) -> PlantParams:
        return PlantParams(**self.plant.model_dump())

    def gains(self) -> PiGains:
        return PiGains(**self.controller.model_dump())

    def sim_config(self) -> SimConfig:
        return SimConfig(**self.sim.model_dump())

    def channel_config(self) -> ChannelConfig:
        data = self.channel.model_dump()
        delay = DelayModel(**data.pop("delay"))
        return ChannelConfig(delay=delay, **data)

    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(**self.objective.model_dump())

    def ga_config(self) -> GaConfig:
        data = self.ga.model_dump()
        bounds = (data.pop("kp_min"), data.pop("kp_max"), data.pop("ki_min"), data.pop("ki_max"))
        return GaConfig(bounds=bounds, **data)

    def node_config(self) -> NodeConfig:
        return NodeConfig(
            plant=self.plant_params(),
            gains=self.gains(),
            sim=self.sim_config(),
            channel=self.channel_config(),
            **self.rt.model_dump(),
        )

    def to_domain(self) -> Dict[str, Any]:
        """
        轉換為各模組的領域配置物件

        Returns:
            Dict[str, Any]: plant, gains, sim, channel, weights, ga, node 七組配置

        Raises:
            ConfigError: 任何一組配置違反不變條件時
        """
        sweep = self.sweep
        for i, p in enumerate(sweep.drop_probs):
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"sweep.drop_probs.{i}", "遺失機率必須介於 0 與 1 之間")
        if sweep.seeds < 1:
            raise ConfigError("sweep.seeds", "種子數必須 >= 1")
        return {
            "plant": self.plant_params(),
            "gains": self.gains(),
            "sim": self.sim_config(),
            "channel": self.channel_config(),
            "weights": self.weights(),
            "ga": self.ga_config(),
            "node": self.node_config(),
        }


def parse_run_config(document: Dict[str, Any]) -> RunConfig:
    """
    解析並驗證執行配置字典

    Args:
        document (Dict[str, Any]): JSON 解析後的字典

    Returns:
        RunConfig: 已套用預設值且通過所有模組驗證的配置

    Raises:
        ConfigError: 欄位未知、型別錯誤或違反模組不變條件時
    """
    try:
        run_config = RunConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(path, first["msg"]) from e
    run_config.to_domain()
    return run_config


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    從 JSON 檔載入執行配置

    Args:
        path (Optional[str]): 配置檔路徑；None 時使用全部預設值

    Returns:
        RunConfig: 有效配置
    """
    if path is None:
        logger.info("未指定配置檔，使用預設配置")
        return parse_run_config({})

    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError("--config", f"找不到配置檔: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"配置檔 JSON 格式錯誤: {e}")

    if not isinstance(document, dict):
        raise ConfigError("<root>", "配置檔最外層必須是 JSON 物件")

    run_config = parse_run_config(document)
    logger.info(f"配置檔載入成功: {path}")
    return run_config


def apply_overrides(run_config: RunConfig, seed: Optional[int] = None, role: Optional[str] = None) -> RunConfig:
    """
    套用命令列覆寫值並重新驗證

    --seed 同時覆寫 sim.seed 與 ga.master_seed；--role 覆寫 rt.role。
    配置檔描述的是其中一個節點，若覆寫成另一個角色，bind 與 peer 會對調，
    讓兩個節點可以共用同一份配置檔。
    """
    document = run_config.model_dump()
    if seed is not None:
        document["sim"]["seed"] = seed
        document["ga"]["master_seed"] = seed
    if role is not None and role != document["rt"]["role"]:
        rt = document["rt"]
        rt["role"] = role
        rt["bind"], rt["peer"] = rt["peer"], rt["bind"]
    return parse_run_config(document)


def dump_run_config(run_config: RunConfig, path: Path) -> None:
    """將有效配置（含預設值）寫入輸出目錄，可直接重新載入重現同一次執行"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(run_config.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")


# ============================================================================
# 環境變數設定
# ============================================================================

@dataclass
class AppSettings:
    """
    程序層級設定

    從環境變數（可透過 .env 檔）載入，與單次執行配置檔分開管理。
    """
    log_level: str = "INFO"
    workers: int = 1
    output_dir: str = "./output"

    def __post_init__(self):
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"無效的日誌等級: {self.log_level}")
        if self.workers < 1:
            raise ValueError("平行程序數必須 >= 1")

    @classmethod
    def from_env(cls) -> "AppSettings":
        workers = os.getenv("NCS_WORKERS", "1")
        try:
            workers_value = int(workers)
        except ValueError:
            logger.warning(f"環境變數 'NCS_WORKERS' 的值 '{workers}' 不是有效的整數，改用 1")
            workers_value = 1
        return cls(
            log_level=os.getenv("NCS_LOG_LEVEL", "INFO").upper(),
            workers=workers_value,
            output_dir=os.getenv("NCS_OUTPUT_DIR", "./output"),
        )


settings = AppSettings.from_env()


def get_settings() -> AppSettings:
    """獲取程序層級設定"""
    return settings


def settings_summary() -> Dict[str, Any]:
    """設定摘要（寫入日誌用）"""
    return asdict(settings)

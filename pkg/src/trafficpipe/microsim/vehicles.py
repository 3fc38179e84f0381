"""Vehicle classes, the car-following law and per-vehicle fuel/CO rates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

MPS_TO_MPH = 1.0 / 0.44704
IDLE_FUEL_RATE = 0.666  # mL/s


@dataclass(frozen=True)
class VehicleParams:
    """Car-following parameters of one vehicle class.

    ``a_max`` and ``b_comf`` in m/s^2, ``T`` in seconds, ``s0`` and
    ``length`` in meters. ``speed_factor`` scales the edge speed limit into
    the desired speed.
    """

    cls: str
    a_max: float
    b_comf: float
    T: float
    s0: float
    length: float
    speed_factor: float = 1.0

    def __post_init__(self):
        for name in ("a_max", "b_comf", "T", "s0", "length", "speed_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_cells(self) -> int:
        return math.ceil(self.length)


CAR = VehicleParams("car", a_max=1.5, b_comf=2.0, T=1.6, s0=2.0, length=5.0)
TRUCK = VehicleParams("truck", a_max=0.8, b_comf=1.5, T=1.8, s0=3.0, length=12.0, speed_factor=0.9)


@dataclass
class VehicleState:
    id: int
    params: VehicleParams
    origin: int
    dest: int
    departure: float
    route: list = field(default_factory=list)  # edge indices
    route_index: int = 0
    lane: int = 0
    pos: float = 0.0  # front bumper, meters from the start of the edge
    v: float = 0.0
    accel: float = 0.0
    active: bool = False
    arrived: bool = False
    lc_mode: str = "discretionary"
    cum_fuel: float = 0.0  # mL
    cum_co: float = 0.0  # g
    cum_distance: float = 0.0
    travel_time: float = 0.0
    edge_entry_time: float = 0.0
    edges_traversed: int = 0
    holding_stop: int | None = None  # stop-controlled node granted to this vehicle

    @property
    def edge(self) -> int:
        return self.route[self.route_index]

    @property
    def rear(self) -> float:
        return self.pos - self.params.length


def idm_acceleration(v: float, v0: float, s: float, dv: float, p: VehicleParams) -> float:
    """Intelligent Driver Model acceleration.

    ``s`` is the bumper-to-bumper gap to the leader (``math.inf`` without
    one) and ``dv = v - v_leader`` is the closing speed.
    """
    free = (v / v0) ** 4
    if math.isinf(s):
        return p.a_max * (1.0 - free)
    s_star = p.s0 + p.T * v + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    return p.a_max * (1.0 - free - (s_star / s) ** 2)


def co_emission_rate(v_mph: float) -> float:
    """CO emission rate in g/s for a speed in mph."""
    if v_mph < 0:
        raise ValueError("speed must be non-negative")
    return -0.064 + 0.0056 * v_mph + 0.00026 * (v_mph - 50.0) ** 2


def fuel_rate(v_mps: float, a_mps2: float) -> float:
    """Instantaneous fuel use in mL/s.

    The acceleration terms (``1.680 a v`` and the engine drag
    ``0.79296 a^2 v``) apply only while accelerating; the rate never drops
    below idle.
    """
    if v_mps < 0:
        raise ValueError("speed must be non-negative")
    v = v_mps
    power = 0.269 * v + 0.0171 * v * v + 0.000672 * v**3
    if a_mps2 > 0:
        power += 1.680 * a_mps2 * v + 0.79296 * a_mps2 * a_mps2 * v
    return max(IDLE_FUEL_RATE, IDLE_FUEL_RATE + 0.072 * power)

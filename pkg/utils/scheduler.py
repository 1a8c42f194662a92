import bisect
import logging
from typing import Dict, List, Tuple

import numpy as np

from services.mission_service import HumanSample

logger = logging.getLogger(__name__)


class ScenarioTimeline:
    """Answers what the scenario script prescribes at a simulated time"""

    def __init__(self, script):
        self.script = script
        self._human_times: List[float] = [event.t for event in script.human]
        self._human_samples: List[HumanSample] = [
            HumanSample(
                distance=event.distance,
                arm_presented=event.arm_presented,
                dropout=event.dropout,
                outlier=event.outlier,
            )
            for event in script.human
        ]
        self._leak_cache: Dict[Tuple[float, float], object] = {}
        logger.info(
            f"Timeline '{script.name}': {len(script.human)} human samples, "
            f"{len(script.leaks)} leak windows, {len(script.disturbances)} disturbances"
        )

    def steps(self, dt: float) -> int:
        """Number of fixed steps covering the scenario duration"""
        return int(round(self.script.duration / dt))

    def human_at(self, t: float) -> HumanSample:
        """Latest scripted sample at or before t (sample and hold)"""
        index = bisect.bisect_right(self._human_times, t + 1e-12) - 1
        if index < 0:
            return HumanSample()
        return self._human_samples[index]

    def leak_rates(self, t: float) -> Tuple[float, float]:
        """Scripted (joint, bottom) leak rates [kPa/s] active at t"""
        joint = 0.0
        bottom = 0.0
        for window in self.script.leaks:
            if window.start <= t < window.end:
                if window.circuit == 'joint':
                    joint += window.rate
                else:
                    bottom += window.rate
        return joint, bottom

    def flow_at(self, t: float, flow):
        """Flow parameters with the scripted leaks added to the configured ones"""
        key = self.leak_rates(t)
        if key not in self._leak_cache:
            self._leak_cache[key] = flow.model_copy(update={
                'leak_joint': flow.leak_joint + key[0],
                'leak_bottom': flow.leak_bottom + key[1],
            })
        return self._leak_cache[key]

    def disturbance_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """World-frame force and body-frame torque disturbances active at t"""
        force = np.zeros(3)
        torque = np.zeros(3)
        for window in self.script.disturbances:
            if window.start <= t < window.end:
                force += np.asarray(window.force, dtype=float)
                torque += np.asarray(window.torque, dtype=float)
        return force, torque

    def deperch_requested(self, t: float) -> bool:
        request = self.script.deperch_request_at
        return request is not None and t >= request

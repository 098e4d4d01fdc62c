"""PID loop on return-air temperature acting on the RCU supply temperature."""

from __future__ import annotations

from dataclasses import dataclass

from ..thermo import CoolingCommand


@dataclass
class PidState:
    kp: float = 4.5
    ki: float = 0.18
    kd: float = 0.1
    setpoint: float = 65.0
    theta_min: float = 18.0
    theta_max: float = 27.0
    phi: float = 0.03
    integral: float = 0.0
    prev_error: float = 0.0

    @property
    def baseline(self):
        return 0.5 * (self.theta_min + self.theta_max)


def pid_step(measured_theta_ret, pid, dt):
    """Update ``pid`` in place and return the supply command.

    ``e = setpoint - theta_ret`` so a hot return lowers the supply
    temperature.  The integral is clamped so its contribution alone cannot
    push the command past the actuator range.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = pid.setpoint - measured_theta_ret
    pid.integral += e * dt
    if pid.ki > 0:
        lo = (pid.theta_min - pid.baseline) / pid.ki
        hi = (pid.theta_max - pid.baseline) / pid.ki
        pid.integral = min(max(pid.integral, lo), hi)
    u = pid.kp * e + pid.ki * pid.integral + pid.kd * (e - pid.prev_error) / dt
    pid.prev_error = e
    theta = min(max(pid.baseline + u, pid.theta_min), pid.theta_max)
    return CoolingCommand(theta, pid.phi)


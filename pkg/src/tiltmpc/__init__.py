"""Servo-integrated NMPC and closed-loop simulator for tiltable quadrotors."""
from .alloc import Allocation, AllocationError, AllocationMap, allocate, build_allocation
from .compensator import ITermState, iterm_reset, iterm_update
from .model import (Disturbance, Input, IntegrationError, PlantState, RobotParams, State, Wrench,
                    control_deriv, plant_deriv, quat_error_vec, quat_mul, quat_to_rot, rk4_step,
                    rotor_wrench, rpy_to_quat)
from .nmpc import (OcpConfig, OcpWeights, RtiSolver, SolveResult, WarmStart, cold_start,
                   linearize_dynamics, shift_warm_start, solve_rti, stage_residual)
from .refgen import (PoseTarget, PoseTrajectory, ReferenceWindow, build_figure8, setpoint_window,
                     trajectory_window)
from .sim import RunLog, Scenario, ablation_compare, metrics, run_closed_loop
from .sysid import IdentificationError, StepLogSeries, fit_first_order, fit_quadratic_thrust

__version__ = "0.1.0"

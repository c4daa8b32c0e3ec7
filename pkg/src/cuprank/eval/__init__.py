from .metrics import (ArmReport, Estimate, Lift, MetricsReport, ci95_proportion, ci95_rate,
                      clicks_per_user, compare, conversion, ctr, report_from_counts)
from .simulate import (ClickModel, ContextualArm, GlobalArm, OracleArm, SimulationConfig,
                       simulate_sessions)
from .synthetic import GroundTruth, SyntheticConfig, World, build_world, generate

"""One desk-scale convex-integration step q -> q+1."""
from .schedule import Constraint, ParamSchedule, ScheduleError, schedule_params, desk_schedule
from .geometry import DirectionSet, Frame, GeometryError, default_directions, geometric_coeffs, measure_M
from .blocks import (BuildingBlockProfile, BuildingBlocks, DisjointnessError, ResolutionError,
                     build_blocks, place_shifts, required_support)
from .gluing import (Snapshot, ShearExact, ZeroExact, TrajectoryExact, ExactFlowStage, TwoFlowStage,
                     MollifiedStage, GluedStage, StageError, mollify_stage, build_glued, stage_residual)
from .flowmaps import FlowMap, FlowMapSet, flow_map, solve_flow_maps
from .perturbation import (Perturbation, PerturbationError, NextStage, InductiveReport,
                           build_perturbation, perturbation_at, assemble_next, inductive_check)

"""Grasp-geometry toolkit: distance-matrix grasp representation, point-cloud
forward kinematics, multilateration recovery, rigid registration, and
constrained joint optimization."""

from .cloud import (PointCloud, SamplingConfig, TriangleMesh, cloud_fk,
                    farthest_point_sampling, load_obj, partial_cloud,
                    sample_link_clouds, sample_mesh_surface,
                    sample_object_cloud, save_obj)
from .dro import compute_dro, multilaterate_point, recover_cloud
from .errors import (ContractError, DataError, DegeneracyError, DroError,
                     FormatError, StageError, StructureError, UrdfError)
from .formats import (read_dromx, read_dropc, write_dromx, write_dropc)
from .kinematics import (JointSpec, KinematicModel, LinkPoseSet,
                         clamp_to_limits, forward_kinematics, in_limits,
                         link_origin_jacobian, load_model, matrix_from_rpy,
                         model_summary, rpy_from_matrix)
from .losses import (contrastive_loss, contrastive_weights, dro_l1_loss,
                     penetration_loss, pose_loss, signed_distances,
                     winding_numbers)
from .metrics import (GraspRecord, controller_targets, disturbance_forces,
                      diversity, per_dimension_std, read_grasp_records,
                      write_grasp_records)
from .optimizer import (GraspResult, SolveParams, SolveReport,
                        link_targets_from_poses, recover_grasp, solve_joints)
from .registration import register_all, register_link, registration_residual

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "SamplingConfig", "TriangleMesh", "cloud_fk",
    "farthest_point_sampling", "load_obj", "partial_cloud",
    "sample_link_clouds", "sample_mesh_surface", "sample_object_cloud",
    "save_obj",
    "compute_dro", "multilaterate_point", "recover_cloud",
    "ContractError", "DataError", "DegeneracyError", "DroError",
    "FormatError", "StageError", "StructureError", "UrdfError",
    "read_dromx", "read_dropc", "write_dromx", "write_dropc",
    "JointSpec", "KinematicModel", "LinkPoseSet", "clamp_to_limits",
    "forward_kinematics", "in_limits", "link_origin_jacobian", "load_model",
    "matrix_from_rpy", "model_summary", "rpy_from_matrix",
    "contrastive_loss", "contrastive_weights", "dro_l1_loss",
    "penetration_loss", "pose_loss", "signed_distances", "winding_numbers",
    "GraspRecord", "controller_targets", "disturbance_forces", "diversity",
    "per_dimension_std", "read_grasp_records", "write_grasp_records",
    "GraspResult", "SolveParams", "SolveReport", "link_targets_from_poses",
    "recover_grasp", "solve_joints",
    "register_all", "register_link", "registration_residual",
]

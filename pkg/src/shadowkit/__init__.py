"""shadowkit: cross-embodiment robot mask editing toolkit."""

__version__ = "0.1.0"

from .geometry import (CalibrationNoiseSpec, CameraIntrinsics, Transform,
                       compose, invert, perturb_extrinsics, project)
from .robot_model import (Embodiment, JointSpec, RobotModel, TriangleMesh,
                          attach_gripper, parse_obj, parse_stl, parse_urdf)
from .kinematics import (IkParams, JointState, fk, ik_solve, jacobian,
                         reexpress_ee)
from .render import (DepthBuffer, Mask, occlusion_filter, render_robot,
                     segment_robot)
from .compose import (CompositeResult, EditConfig, Frame, Image, edit_eval,
                      edit_frame, edit_train)
from .pipeline import (Dataset, DatasetManifest, EditReport, TrajectoryRecord,
                       load_dataset, run_edit)
from .toy_transfer import (MlpPolicy, PlanarEmbodiment, ToyScene,
                           run_experiment, scripted_expert, train_bc,
                           two_proportion_z_test)

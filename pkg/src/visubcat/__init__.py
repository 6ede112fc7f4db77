"""Visual-subcategory detection toolkit.

K appearance-clustered rigid templates per category, trained as a latent
mixture SVM with hard negative mining, calibrated per subcategory, and
evaluated with PASCAL-style average precision. A scene mode applies the same
subcategory idea to one-vs-all GIST classifiers.
"""
from ._backend import available_backends, backend, set_backend
from .calibration import calibrate, fit_sigmoid
from .dataset import DatasetManifest, load_manifest, save_manifest
from .detection import Detection, detect, read_detections, write_detections
from .evaluation import average_precision, overlap
from .features import build_pyramid, gist, hog
from .imaging import BoundingBox, GrayImage, load_image, save_pgm
from .model import MixtureModel, TrainConfig, load_model, save_model
from .scene import classify_scene, train_scene
from .svm import train_linear_svm
from .synth import SynthSpec, generate, write_synth
from .training import train_detector, train_mixture

__version__ = "0.1.0"

"""Planning by imagined pick & place on layered top-view scenes with affordances."""

from .scene import Affordance, ClassLabel, Pose, Scene, ObjectInstance, PoseDictionary, composite
from .validation import validate, conflict_area, goal_reached, default_threshold

__version__ = "0.1.0"

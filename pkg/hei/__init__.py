"""
Heterophily-guided environment inference for node classification:
graph IO and homophily splits, neighbor-pattern similarity, a synthetic
shift generator, backbones, trainers and the experiment harness.
"""
from app.config import Config

__version__ = Config.TOOL_VERSION

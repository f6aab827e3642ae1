"""Interactive requirement elicitation over a decomposition tree.

The package turns a one-line product intent into a full requirements document
by walking a five-section requirement tree, interviewing the user (or a user
simulator) about one leaf at a time, folding the elicited preferences back
into the tree, and finally synthesizing the document. Companion modules score
documents against rubrics and turn session outcomes into RL-ready rewards.
"""

__version__ = "0.1.0"

from .tree import RequirementTree, TreeNode, parse_tree, serialize_tree  # noqa: F401

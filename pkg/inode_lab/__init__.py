"""
inode-lab: invariant latent neural ODEs (NODE, INODE, SINODE) at desk scale.
"""

__version__ = "0.1.0"

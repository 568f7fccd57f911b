"""Pipeline stages from indexing through scoring."""

"""Episode loop, evaluation campaigns and planner construction."""

"""Joint workload dispatch, battery scheduling and multi-source power purchasing."""

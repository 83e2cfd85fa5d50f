"""Lifecycle investment, consumption and life insurance with an American-put capital guarantee."""

"""Dendritic computation laboratory."""

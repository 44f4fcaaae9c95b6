"""
Reviser module initialization
"""

"""
SRPL Utilities Package
"""

"""
Services package for the engine thermal boundary-condition pipeline
"""

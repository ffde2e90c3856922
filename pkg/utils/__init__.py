"""
Utils package: configuration, errors and the expression grammar
"""

"""
Processors package: CSV ingestion, model documents and report output
"""

"""
Pipeline stages package.

Each stage module follows a consistent pattern:
- Docstring with Input/Output files documented
- Module constants in a CONFIGURATION block
- main() function as the entry point

Stages:
- s00_ingest: market CSV -> repaired panel
- s01_point_forecast: expert-model point forecasts per VST
- s02_prob_forecast: percentile curves (HS, QRA/QRM/QRF and smoothed variants)
- s03_evaluation: MAE, PICP, Kupiec, pinball and CPA scores
- s04_backtest: battery trading strategies and the unlimited benchmark
"""

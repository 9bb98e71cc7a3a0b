"""
Services package: training, augmentation, data generation, benchmarks and experiments
"""

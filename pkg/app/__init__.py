"""Rule Layer - rule-guided reinforcement-learning correction of sequence labels"""

__version__ = "0.1.0"

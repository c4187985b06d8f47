"""Leader/follower word-spike analysis for grouped, timestamped message corpora."""

__version__ = "0.1.0"

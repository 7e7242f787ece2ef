"""Knowledge-guided domain adaptation for outcome prediction on rare ICU conditions."""

__version__ = "0.1.0"

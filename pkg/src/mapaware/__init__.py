"""Map-aware indoor localization: models, fitting, estimators and evaluation."""

# Utils package: models, estimators and numeric helpers

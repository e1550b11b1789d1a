# Snow hazard pipeline: samples, synth, extract, transform, validate, hazard, metrics, report, orchestrator

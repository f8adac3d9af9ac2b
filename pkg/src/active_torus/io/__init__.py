"""Run artifacts: checkpoints, diagnostic sinks, scenario presets and run orchestration."""

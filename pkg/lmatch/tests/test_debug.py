import logging

import numpy as np

from utils.debug import DebugManager


class TestDebugManager:
    def test_silent_when_disabled(self, caplog):
        caplog.set_level(logging.DEBUG, logger="lmatch.debug")
        tracer = DebugManager(enabled=False)
        tracer.print("hidden")
        tracer.array("x", np.ones(3))
        assert caplog.records == []

    def test_array_summary_counts_nonfinite(self, caplog):
        caplog.set_level(logging.DEBUG, logger="lmatch.debug")
        tracer = DebugManager(enabled=True)
        tracer.array("samples", np.array([1.0, np.nan, 3.0, np.inf]))
        message = caplog.records[-1].getMessage()
        assert "shape=(4,)" in message and "nonfinite=2" in message and "max=3" in message

    def test_metrics_and_calls(self, caplog):
        caplog.set_level(logging.DEBUG, logger="lmatch.debug")
        tracer = DebugManager(enabled=True)
        tracer.metrics("step 3", loss=0.5, barriers=2)
        tracer.call("make_schedule", "linear", 1000, beta_end=0.02)
        messages = [r.getMessage() for r in caplog.records]
        assert messages[0] == "STEP: step 3: loss=0.5 barriers=2"
        assert messages[1] == "CALL: make_schedule('linear', 1000, beta_end=0.02)"

from .GateModule import GateModule, GateOutput, GateOverhead, binconcrete, gate_forward, gate_overhead_macs, l0_loss, logistic_noise

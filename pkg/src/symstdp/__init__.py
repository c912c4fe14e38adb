"""Spiking network trainer built on conductance-based LIF layers.

Learning combines three mechanisms: a symmetric STDP rule (both causal and
anticausal pairings potentiate), divisive synaptic scaling that renormalizes
each neuron's total afferent weight, and a slow adaptive threshold that keeps
per-neuron firing rates homeostatic. Supervision enters through a teacher
signal that forces label-neuron spikes during training.
"""

__version__ = "0.1.0"

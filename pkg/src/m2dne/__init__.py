"""Temporal network embeddings driven jointly by event-level dynamics and a
network-scale growth constraint."""

from .graph import (HistoryBuffer, LabelTable, MacroSeries, ParseError,
                    TemporalEvent, TemporalNetwork, build_history_stream,
                    compute_macro_series, parse_edge_list, parse_labels,
                    snapshot_arrays, split_by_time, write_edge_list)
from .macro import (MacroParams, edge_affinity, fit_params, forecast_scale,
                    linear_node_forecast, linking_rate, macro_loss,
                    predicted_new_edges)
from .micro import (AttentionParams, NegativeTable, aggregate_neighborhood,
                    event_probability_full, global_attention, intensity,
                    intensity_raw, local_attention, micro_loss_full,
                    sample_negatives, similarity, time_decay)
from .micrograd import EventBatch, batch_loss_and_grads, micro_loss_sampled
from .train import (GradCheckReport, LossTrace, ModelState, TrainConfig,
                    TrainData, fit, gradient_check, init_state, joint_loss,
                    load_checkpoint, sample_batch, save_checkpoint, step)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

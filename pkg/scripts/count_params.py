#!/usr/bin/env python3
"""Independent parameter-count oracle.

Computes the trainable-parameter and running-statistic totals of the
network from its configuration arithmetic alone, without importing the
package. Used to freeze the count fixture asserted by the test suite.

Usage: python scripts/count_params.py
"""
import math


def count(height, width, channels, stages, reduction_ratio, fc_units, num_classes,
          batch_norm=True, se_blocks=True):
    trainable = 0
    stats = 0
    h, w, c = height, width, channels
    for filters, kernel in stages:
        trainable += kernel * kernel * c * filters + filters  # conv kernel + bias
        if batch_norm:
            trainable += 2 * filters
            stats += 2 * filters
        if se_blocks:
            hidden = math.ceil(filters / reduction_ratio)
            trainable += filters * hidden + hidden + hidden * filters + filters
        h, w, c = (h - kernel + 1) // 2, (w - kernel + 1) // 2, filters
    flat = h * w * c
    trainable += flat * fc_units + fc_units          # fc1
    if batch_norm:
        trainable += 2 * fc_units
        stats += 2 * fc_units
    trainable += fc_units * fc_units + fc_units      # fc2
    if batch_norm:
        trainable += 2 * fc_units
        stats += 2 * fc_units
    trainable += fc_units * num_classes + num_classes  # classifier
    return trainable, stats, flat


if __name__ == "__main__":
    default = dict(
        height=200, width=200, channels=3,
        stages=[(32, 5), (64, 3), (64, 3), (128, 2), (256, 2)],
        reduction_ratio=16, fc_units=256, num_classes=23,
    )
    trainable, stats, flat = count(**default)
    print(f"flatten width:        {flat}")
    print(f"trainable parameters: {trainable}")
    print(f"running statistics:   {stats}")

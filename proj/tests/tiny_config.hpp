#pragma once

#include <string>

// A config small enough to train in well under a second.
inline std::string tiny_config(int tasks) {
    return "scenario: class_il\n"
           "tasks: " + std::to_string(tasks) + "\n"
           "seeds: [1, 2]\n"
           "data: {classes: 4, input_dim: 6, samples_per_class: 12}\n"
           "model: {encoder: [6, 8, 4], projector: [4, 8, 4], predictor: [4, 8, 4]}\n"
           "train: {epochs_per_task: 2, batch_size: 8}\n"
           "probe: {epochs: 50}\n";
}

// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "meteor/decoder.hpp"
#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/stage3.hpp"

namespace meteor {

/// Every knob of one experiment. Parsed strictly: unknown keys are errors and
/// no object violating the structural invariants can be constructed.
struct PipelineConfig {
    std::uint64_t seed = 1;
    double rel_tol = 1e-6;
    std::size_t probe_batch = 8;
    std::size_t min_tokens_per_encoder = 1;

    std::vector<EncoderSpec> encoders;
    std::vector<std::size_t> stage1_totals;  // one per phase

    std::size_t stage2_k = 576;
    std::size_t projector_hidden = 64;
    std::uint64_t projector_seed = 0;

    DecoderSpec decoder;
    std::size_t text_tokens = 16;
    std::uint64_t text_seed = 0;

    Stage3Options stage3;

    std::size_t suite_size = 6;
    std::vector<std::size_t> calibration_targets;

    std::size_t diag_top_k = 64;

    std::size_t initial_visual_total() const {
        std::size_t total = 0;
        for (const auto& e : encoders) {
            total += e.token_count;
        }
        return total;
    }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (allowed.find(key) == allowed.end()) {
            throw ConfigError("unknown key '" + path + key + "'");
        }
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, const std::string& path, T fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + path + key + "' has the wrong type");
    }
}

template <typename T>
T get_required(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.contains(key)) {
        throw ConfigError("missing required key '" + path + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + path + key + "' has the wrong type");
    }
}

}  // namespace detail

inline void validate(const PipelineConfig& cfg) {
    if (cfg.encoders.empty()) {
        throw ConfigError("encoders: at least one encoder required");
    }
    std::set<std::string> ids;
    for (const auto& enc : cfg.encoders) {
        if (!ids.insert(enc.encoder_id).second) {
            throw ConfigError("encoders: id '" + enc.encoder_id + "' defined more than once");
        }
        try {
            validate(enc);
        } catch (const InvalidConfig& e) {
            throw ConfigError(std::string("encoders: ") + e.what());
        }
    }
    if (!(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0)) {
        throw ConfigError("rel_tol: must lie in (0, 1)");
    }
    if (cfg.probe_batch == 0) {
        throw ConfigError("probe_batch: must be positive");
    }
    if (cfg.min_tokens_per_encoder == 0) {
        throw ConfigError("min_tokens_per_encoder: must be positive");
    }
    if (cfg.stage1_totals.size() != 3) {
        throw ConfigError("stage1.totals: exactly three phase totals required");
    }
    for (std::size_t i = 0; i < cfg.stage1_totals.size(); ++i) {
        if (i > 0 && cfg.stage1_totals[i] > cfg.stage1_totals[i - 1]) {
            throw ConfigError("stage1.totals: must be non-increasing");
        }
        if (cfg.stage1_totals[i] < cfg.encoders.size() * cfg.min_tokens_per_encoder) {
            throw ConfigError("stage1.totals: below the per-encoder minimum");
        }
        if (cfg.stage1_totals[i] > cfg.initial_visual_total()) {
            throw ConfigError("stage1.totals: above the initial token count");
        }
    }
    if (cfg.stage2_k == 0 || cfg.stage2_k > cfg.stage1_totals.back()) {
        throw ConfigError("stage2.k: must lie in [1, last stage-1 total]");
    }
    if (cfg.projector_hidden == 0) {
        throw ConfigError("stage2.hidden_dim: must be positive");
    }
    try {
        validate(cfg.decoder);
    } catch (const InvalidConfig& e) {
        throw ConfigError(std::string("decoder: ") + e.what());
    }
    if (cfg.text_tokens == 0) {
        throw ConfigError("decoder.text_tokens: must be positive");
    }
    try {
        // Fixed-mode plumbing is validated lazily; structural checks happen here.
        Stage3Options probe = cfg.stage3;
        if (probe.mode == Stage3Mode::kAdaptive && probe.lambda_per_layer.empty()) {
            probe.lambda_per_layer.assign(probe.schedule.size(), 1.0);
        }
        validate(probe, cfg.decoder);
    } catch (const InvalidConfig& e) {
        throw ConfigError(std::string("stage3: ") + e.what());
    }
    if (cfg.stage3.min_keep == 0) {
        throw ConfigError("stage3.min_keep: must be positive");
    }
    if (cfg.suite_size == 0) {
        throw ConfigError("calibration.suite_size: must be positive");
    }
    if (cfg.calibration_targets.size() != cfg.stage3.schedule.size()) {
        throw ConfigError("calibration.targets: one target per scheduled layer required");
    }
    if (cfg.diag_top_k == 0) {
        throw ConfigError("diagnostics.top_k: must be positive");
    }
}

inline PipelineConfig parse_config(const std::string& text) {
    detail::json root;
    try {
        root = detail::json::parse(text);
    } catch (const detail::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) {
        throw ConfigError("config root must be an object");
    }
    detail::reject_unknown_keys(root,
                                {"seed", "rel_tol", "probe_batch", "min_tokens_per_encoder",
                                 "encoders", "stage1", "stage2", "decoder", "stage3",
                                 "calibration", "diagnostics"},
                                "");

    PipelineConfig cfg;
    cfg.seed = detail::get_or<std::uint64_t>(root, "seed", "", 1);
    cfg.rel_tol = detail::get_or<double>(root, "rel_tol", "", 1e-6);
    cfg.probe_batch = detail::get_or<std::size_t>(root, "probe_batch", "", 8);
    cfg.min_tokens_per_encoder =
        detail::get_or<std::size_t>(root, "min_tokens_per_encoder", "", 1);

    if (!root.contains("encoders") || !root.at("encoders").is_array()) {
        throw ConfigError("missing required key 'encoders' (array)");
    }
    for (const auto& enc_json : root.at("encoders")) {
        if (!enc_json.is_object()) {
            throw ConfigError("encoders: each entry must be an object");
        }
        detail::reject_unknown_keys(
            enc_json, {"id", "blocks", "heads", "tokens", "dim", "mlp_hidden", "seed",
                       "synthetic_rank"},
            "encoders.");
        EncoderSpec spec;
        spec.encoder_id = detail::get_required<std::string>(enc_json, "id", "encoders.");
        spec.num_blocks = detail::get_required<std::size_t>(enc_json, "blocks", "encoders.");
        spec.num_heads = detail::get_required<std::size_t>(enc_json, "heads", "encoders.");
        spec.token_count = detail::get_required<std::size_t>(enc_json, "tokens", "encoders.");
        spec.dim = detail::get_required<std::size_t>(enc_json, "dim", "encoders.");
        spec.mlp_hidden = detail::get_or<std::size_t>(enc_json, "mlp_hidden", "encoders.",
                                                      4 * spec.dim);
        spec.seed = detail::get_or<std::uint64_t>(enc_json, "seed", "encoders.", cfg.seed);
        if (enc_json.contains("synthetic_rank")) {
            spec.synthetic_rank =
                detail::get_required<std::size_t>(enc_json, "synthetic_rank", "encoders.");
        }
        cfg.encoders.push_back(std::move(spec));
    }

    const std::size_t total_tokens = cfg.initial_visual_total();
    if (root.contains("stage1")) {
        const auto& s1 = root.at("stage1");
        detail::reject_unknown_keys(s1, {"totals"}, "stage1.");
        cfg.stage1_totals = detail::get_or<std::vector<std::size_t>>(
            s1, "totals", "stage1.", {total_tokens, total_tokens, total_tokens});
    } else {
        cfg.stage1_totals = {total_tokens, total_tokens, total_tokens};
    }

    if (root.contains("decoder")) {
        const auto& dec = root.at("decoder");
        detail::reject_unknown_keys(
            dec, {"layers", "heads", "dim", "mlp_hidden", "text_tokens", "seed", "text_seed"},
            "decoder.");
        cfg.decoder.num_layers = detail::get_or<std::size_t>(dec, "layers", "decoder.", 32);
        cfg.decoder.num_heads = detail::get_or<std::size_t>(dec, "heads", "decoder.", 8);
        cfg.decoder.dim = detail::get_or<std::size_t>(dec, "dim", "decoder.", 32);
        cfg.decoder.mlp_hidden =
            detail::get_or<std::size_t>(dec, "mlp_hidden", "decoder.", 2 * cfg.decoder.dim);
        cfg.text_tokens = detail::get_or<std::size_t>(dec, "text_tokens", "decoder.", 16);
        cfg.decoder.seed = detail::get_or<std::uint64_t>(dec, "seed", "decoder.", cfg.seed ^ 0x5eed);
        cfg.text_seed = detail::get_or<std::uint64_t>(dec, "text_seed", "decoder.",
                                                      cfg.seed ^ 0x7e57);
    } else {
        cfg.decoder.num_layers = 32;
        cfg.decoder.num_heads = 8;
        cfg.decoder.dim = 32;
        cfg.decoder.mlp_hidden = 64;
        cfg.decoder.seed = cfg.seed ^ 0x5eed;
        cfg.text_seed = cfg.seed ^ 0x7e57;
    }

    if (root.contains("stage2")) {
        const auto& s2 = root.at("stage2");
        detail::reject_unknown_keys(s2, {"k", "hidden_dim", "seed"}, "stage2.");
        cfg.stage2_k = detail::get_or<std::size_t>(
            s2, "k", "stage2.", std::min<std::size_t>(576, cfg.stage1_totals.back()));
        cfg.projector_hidden = detail::get_or<std::size_t>(s2, "hidden_dim", "stage2.", 64);
        cfg.projector_seed = detail::get_or<std::uint64_t>(s2, "seed", "stage2.",
                                                           cfg.seed ^ 0xf05e);
    } else {
        cfg.stage2_k = std::min<std::size_t>(576, cfg.stage1_totals.back());
        cfg.projector_hidden = 64;
        cfg.projector_seed = cfg.seed ^ 0xf05e;
    }

    cfg.stage3.schedule = {4, 12, 20};
    cfg.stage3.k_heads = 4;
    cfg.stage3.mode = Stage3Mode::kFixed;
    cfg.stage3.fixed_counts = {390, 172, 78};
    cfg.stage3.min_keep = 16;
    if (root.contains("stage3")) {
        const auto& s3 = root.at("stage3");
        detail::reject_unknown_keys(
            s3, {"mode", "schedule", "fixed_counts", "lambda", "k_heads", "min_keep"},
            "stage3.");
        cfg.stage3.schedule = detail::get_or<std::vector<std::size_t>>(
            s3, "schedule", "stage3.", cfg.stage3.schedule);
        const std::string mode = detail::get_or<std::string>(s3, "mode", "stage3.", "fixed");
        if (mode == "fixed") {
            cfg.stage3.mode = Stage3Mode::kFixed;
        } else if (mode == "adaptive") {
            cfg.stage3.mode = Stage3Mode::kAdaptive;
        } else {
            throw ConfigError("stage3.mode: must be 'fixed' or 'adaptive'");
        }
        cfg.stage3.fixed_counts = detail::get_or<std::vector<std::size_t>>(
            s3, "fixed_counts", "stage3.", cfg.stage3.fixed_counts);
        cfg.stage3.lambda_per_layer =
            detail::get_or<std::vector<double>>(s3, "lambda", "stage3.", {});
        cfg.stage3.k_heads = detail::get_or<std::size_t>(s3, "k_heads", "stage3.", 4);
        cfg.stage3.min_keep = detail::get_or<std::size_t>(s3, "min_keep", "stage3.", 16);
    }

    cfg.calibration_targets = {396, 170, 76};
    if (root.contains("calibration")) {
        const auto& cal = root.at("calibration");
        detail::reject_unknown_keys(cal, {"suite_size", "targets"}, "calibration.");
        cfg.suite_size = detail::get_or<std::size_t>(cal, "suite_size", "calibration.", 6);
        cfg.calibration_targets = detail::get_or<std::vector<std::size_t>>(
            cal, "targets", "calibration.", cfg.calibration_targets);
    }
    if (cfg.calibration_targets.size() != cfg.stage3.schedule.size()) {
        cfg.calibration_targets.resize(cfg.stage3.schedule.size(),
                                       cfg.calibration_targets.empty()
                                           ? 1
                                           : cfg.calibration_targets.back());
    }

    if (root.contains("diagnostics")) {
        const auto& diag = root.at("diagnostics");
        detail::reject_unknown_keys(diag, {"top_k"}, "diagnostics.");
        cfg.diag_top_k = detail::get_or<std::size_t>(diag, "top_k", "diagnostics.", 64);
    }

    validate(cfg);
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("load_config: cannot open '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << file.rdbuf();
    return parse_config(buffer.str());
}

/// Canonical serialization; parse(serialize(parse(x))) is a fixed point.
inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
    nlohmann::json root;
    root["seed"] = cfg.seed;
    root["rel_tol"] = cfg.rel_tol;
    root["probe_batch"] = cfg.probe_batch;
    root["min_tokens_per_encoder"] = cfg.min_tokens_per_encoder;
    root["encoders"] = nlohmann::json::array();
    for (const auto& enc : cfg.encoders) {
        nlohmann::json e;
        e["id"] = enc.encoder_id;
        e["blocks"] = enc.num_blocks;
        e["heads"] = enc.num_heads;
        e["tokens"] = enc.token_count;
        e["dim"] = enc.dim;
        e["mlp_hidden"] = enc.mlp_hidden;
        e["seed"] = enc.seed;
        if (enc.synthetic_rank) {
            e["synthetic_rank"] = *enc.synthetic_rank;
        }
        root["encoders"].push_back(e);
    }
    root["stage1"]["totals"] = cfg.stage1_totals;
    root["stage2"]["k"] = cfg.stage2_k;
    root["stage2"]["hidden_dim"] = cfg.projector_hidden;
    root["stage2"]["seed"] = cfg.projector_seed;
    root["decoder"]["layers"] = cfg.decoder.num_layers;
    root["decoder"]["heads"] = cfg.decoder.num_heads;
    root["decoder"]["dim"] = cfg.decoder.dim;
    root["decoder"]["mlp_hidden"] = cfg.decoder.mlp_hidden;
    root["decoder"]["text_tokens"] = cfg.text_tokens;
    root["decoder"]["seed"] = cfg.decoder.seed;
    root["decoder"]["text_seed"] = cfg.text_seed;
    root["stage3"]["mode"] = (cfg.stage3.mode == Stage3Mode::kFixed) ? "fixed" : "adaptive";
    root["stage3"]["schedule"] = cfg.stage3.schedule;
    root["stage3"]["fixed_counts"] = cfg.stage3.fixed_counts;
    root["stage3"]["lambda"] = cfg.stage3.lambda_per_layer;
    root["stage3"]["k_heads"] = cfg.stage3.k_heads;
    root["stage3"]["min_keep"] = cfg.stage3.min_keep;
    root["calibration"]["suite_size"] = cfg.suite_size;
    root["calibration"]["targets"] = cfg.calibration_targets;
    root["diagnostics"]["top_k"] = cfg.diag_top_k;
    return root;
}

}  // namespace meteor

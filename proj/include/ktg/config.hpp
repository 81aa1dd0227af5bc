#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ktg/data.hpp"
#include "ktg/models.hpp"
#include "ktg/search.hpp"
#include "ktg/training.hpp"

namespace ktg {

/// Which data the validation numbers come from: "explore" trains on one half of
/// the training set and validates on the other; "final" trains on all of it and
/// evaluates on the test set.
enum class Protocol { Explore, Final };

struct RunConfig {
    std::uint64_t seed = 0;
    int parallel = 1;
    Protocol protocol = Protocol::Explore;
    SearchConfig search;
    TrainConfig train;
    BackboneConfig model;
    DatasetSpec data;

    /// Pushes shared settings (seed, parallelism, class count, arch) into the
    /// sub-configs and validates them.
    void resolve();
};

/// Small defaults meant to run in minutes on a laptop.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& cfg);
/// Fields absent from `j` keep their defaults; unknown keys are config errors.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value". The value is read as JSON when it parses, otherwise
/// as a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the optional file, then overrides, in that order.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

std::string_view to_string(Protocol p);

}  // namespace ktg

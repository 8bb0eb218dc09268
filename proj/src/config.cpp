#include "ssync/config.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

#include "ssync/errors.hpp"
#include "ssync/tensor_io.hpp"

namespace ssync {

namespace {

using nlohmann::json;

const std::set<std::string>& known_fields() {
    static const std::set<std::string> fields = {
        "num_images", "grid_h", "grid_w", "embed_dim", "proj_dim",
        "num_heads", "num_blocks", "num_timesteps", "num_subjects", "beta",
        "seed", "gamma", "lambda", "tau", "bli_window_fraction",
        "dropout_attn", "dropout_rfh", "dropout_mask", "threshold_method",
        "subset_images", "mask_layers", "rfh_layers", "bli_layers",
        "use_masks", "use_sharing", "use_rfh", "use_bli", "use_dropouts"};
    return fields;
}

const json& field(const json& root, const std::string& name) {
    const auto it = root.find(name);
    if (it == root.end()) throw ConfigError("missing field " + name);
    return *it;
}

template <typename T>
T get_as(const json& root, const std::string& name) {
    try {
        return field(root, name).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("field " + name + " has the wrong type");
    }
}

void check_layer_set(const std::vector<int>& layers, int num_blocks,
                     const std::string& name) {
    std::set<int> seen;
    for (int l : layers) {
        if (l < 0 || l >= num_blocks) {
            throw ConfigError("field " + name + " has layer index out of range");
        }
        if (!seen.insert(l).second) {
            throw ConfigError("field " + name + " has duplicate entries");
        }
    }
}

} // namespace

void RunConfig::validate() const {
    if (num_images < 1) throw ConfigError("field num_images must be >= 1");
    if (grid_h < 1 || grid_w < 1) throw ConfigError("field grid_h/grid_w must be >= 1");
    if (embed_dim < 1) throw ConfigError("field embed_dim must be >= 1");
    if (proj_dim < 1) throw ConfigError("field proj_dim must be >= 1");
    if (num_heads < 1 || proj_dim % num_heads != 0) {
        throw ConfigError("field proj_dim must be divisible by num_heads");
    }
    if (num_blocks < 1) throw ConfigError("field num_blocks must be >= 1");
    if (num_timesteps < 1) throw ConfigError("field num_timesteps must be >= 1");
    if (num_subjects < 1 || num_subjects > 4) {
        throw ConfigError("field num_subjects must be in [1, 4]");
    }
    if (grid_w < num_subjects) {
        throw ConfigError("field grid_w must be >= num_subjects");
    }
    if (!(beta >= 0.0)) throw ConfigError("field beta must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("field gamma must be in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("field lambda must be in [0, 1]");
    if (!(tau > 0.0)) throw ConfigError("field tau must be > 0");
    if (!(bli_window_fraction >= 0.0 && bli_window_fraction <= 1.0)) {
        throw ConfigError("field bli_window_fraction must be in [0, 1]");
    }
    for (const auto& [rate, name] :
         {std::pair<double, const char*>{dropout_attn, "dropout_attn"},
          {dropout_rfh, "dropout_rfh"},
          {dropout_mask, "dropout_mask"}}) {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw ConfigError(std::string("field ") + name + " must be in [0, 1)");
        }
    }
    std::set<int> subset_seen;
    for (int id : subset_images) {
        if (id < 0 || id >= num_images) {
            throw ConfigError("field subset_images has image id out of range");
        }
        if (!subset_seen.insert(id).second) {
            throw ConfigError("field subset_images has duplicate entries");
        }
    }
    check_layer_set(mask_layers, num_blocks, "mask_layers");
    check_layer_set(rfh_layers, num_blocks, "rfh_layers");
    check_layer_set(bli_layers, num_blocks, "bli_layers");
}

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!root.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : root.items()) {
        (void)value;
        if (!known_fields().count(key)) throw ConfigError("unknown field " + key);
    }

    RunConfig c;
    c.num_images = get_as<int>(root, "num_images");
    c.grid_h = get_as<int>(root, "grid_h");
    c.grid_w = get_as<int>(root, "grid_w");
    c.embed_dim = get_as<int>(root, "embed_dim");
    c.proj_dim = get_as<int>(root, "proj_dim");
    c.num_heads = get_as<int>(root, "num_heads");
    c.num_blocks = get_as<int>(root, "num_blocks");
    c.num_timesteps = get_as<int>(root, "num_timesteps");
    c.num_subjects = get_as<int>(root, "num_subjects");
    c.beta = get_as<double>(root, "beta");
    c.seed = get_as<uint64_t>(root, "seed");
    c.gamma = get_as<double>(root, "gamma");
    c.lambda = get_as<double>(root, "lambda");
    c.tau = get_as<double>(root, "tau");
    c.bli_window_fraction = get_as<double>(root, "bli_window_fraction");
    c.dropout_attn = get_as<double>(root, "dropout_attn");
    c.dropout_rfh = get_as<double>(root, "dropout_rfh");
    c.dropout_mask = get_as<double>(root, "dropout_mask");
    c.threshold_method =
        threshold_method_from_string(get_as<std::string>(root, "threshold_method"));
    c.subset_images = get_as<std::vector<int>>(root, "subset_images");
    c.mask_layers = get_as<std::vector<int>>(root, "mask_layers");
    c.rfh_layers = get_as<std::vector<int>>(root, "rfh_layers");
    c.bli_layers = get_as<std::vector<int>>(root, "bli_layers");
    c.use_masks = get_as<bool>(root, "use_masks");
    c.use_sharing = get_as<bool>(root, "use_sharing");
    c.use_rfh = get_as<bool>(root, "use_rfh");
    c.use_bli = get_as<bool>(root, "use_bli");
    c.use_dropouts = get_as<bool>(root, "use_dropouts");
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

std::string serialize_config(const RunConfig& c) {
    json root;
    root["num_images"] = c.num_images;
    root["grid_h"] = c.grid_h;
    root["grid_w"] = c.grid_w;
    root["embed_dim"] = c.embed_dim;
    root["proj_dim"] = c.proj_dim;
    root["num_heads"] = c.num_heads;
    root["num_blocks"] = c.num_blocks;
    root["num_timesteps"] = c.num_timesteps;
    root["num_subjects"] = c.num_subjects;
    root["beta"] = c.beta;
    root["seed"] = c.seed;
    root["gamma"] = c.gamma;
    root["lambda"] = c.lambda;
    root["tau"] = c.tau;
    root["bli_window_fraction"] = c.bli_window_fraction;
    root["dropout_attn"] = c.dropout_attn;
    root["dropout_rfh"] = c.dropout_rfh;
    root["dropout_mask"] = c.dropout_mask;
    root["threshold_method"] = to_string(c.threshold_method);
    root["subset_images"] = c.subset_images;
    root["mask_layers"] = c.mask_layers;
    root["rfh_layers"] = c.rfh_layers;
    root["bli_layers"] = c.bli_layers;
    root["use_masks"] = c.use_masks;
    root["use_sharing"] = c.use_sharing;
    root["use_rfh"] = c.use_rfh;
    root["use_bli"] = c.use_bli;
    root["use_dropouts"] = c.use_dropouts;
    return root.dump(2) + "\n";
}

} // namespace ssync

#include "guardnn/workload.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace guardnn::workload {

using nlohmann::json;

const char* to_string(RegionKind k) {
    switch (k) {
        case RegionKind::Input: return "input";
        case RegionKind::Weight: return "weight";
        case RegionKind::Feature: return "feature";
        case RegionKind::Gradient: return "gradient";
    }
    return "?";
}

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Fc: return "fc";
        case LayerKind::Conv: return "conv";
        case LayerKind::Add: return "add";
        case LayerKind::Identity: return "identity";
    }
    return "?";
}

const char* to_string(Mode m) {
    return m == Mode::Inference ? "inference" : "training";
}

const TensorRegion& Dfg::region(u32 id) const {
    if (id >= regions.size()) throw SimError("region id out of range");
    return regions[id];
}

u64 Dfg::address_space_bytes() const {
    u64 end = 0;
    for (const auto& r : regions) end = std::max(end, r.end());
    return end;
}

namespace {

u64 align_chunk(u64 v) {
    return (v + kChunkBytes - 1) / kChunkBytes * kChunkBytes;
}

struct LayerShape {
    u64 in_elems = 0;   // first (chained) input
    u64 out_elems = 0;
    u64 weight_elems = 0;
    u64 macs = 0;
};

LayerShape shape_of(const LayerSpec& ls, u64 prev_elems, size_t index) {
    LayerShape s;
    s.in_elems = prev_elems;
    switch (ls.kind) {
        case LayerKind::Fc:
            if (ls.in == 0 || ls.out == 0)
                throw ConfigError("layer " + std::to_string(index) + ": fc needs in/out");
            if (ls.in != prev_elems)
                throw ConfigError("layer " + std::to_string(index) + ": fc in=" +
                                  std::to_string(ls.in) + " but upstream produces " +
                                  std::to_string(prev_elems) + " elements");
            s.out_elems = ls.out;
            s.weight_elems = ls.in * ls.out;
            s.macs = ls.in * ls.out;
            break;
        case LayerKind::Conv: {
            if (ls.in_ch == 0 || ls.out_ch == 0 || ls.kernel == 0 || ls.out_h == 0 || ls.out_w == 0)
                throw ConfigError("layer " + std::to_string(index) +
                                  ": conv needs in_ch/out_ch/kernel/out_h/out_w");
            if (prev_elems % ls.in_ch != 0)
                throw ConfigError("layer " + std::to_string(index) +
                                  ": in_ch does not divide upstream element count");
            u64 ch = ls.conv_out_h ? ls.conv_out_h : ls.out_h;
            u64 cw = ls.conv_out_w ? ls.conv_out_w : ls.out_w;
            s.out_elems = ls.out_ch * ls.out_h * ls.out_w;
            s.weight_elems = ls.kernel * ls.kernel * ls.in_ch * ls.out_ch;
            s.macs = s.weight_elems * ch * cw;
            break;
        }
        case LayerKind::Add:
        case LayerKind::Identity:
            s.out_elems = prev_elems;
            s.weight_elems = 0;
            s.macs = prev_elems;
            break;
    }
    return s;
}

} // namespace

Dfg build_network(const NetworkSpec& spec, Mode mode) {
    if (spec.element_bits != 6 && spec.element_bits != 8 && spec.element_bits != 16)
        throw ConfigError("element_bits must be 6, 8, or 16");
    const u64 elem_bytes = (spec.element_bits + 7) / 8;

    Dfg dfg;
    dfg.mode = mode;
    dfg.name = spec.name;
    if (spec.layers.empty()) return dfg;
    if (spec.input_elems == 0) throw ConfigError("input_elems must be positive");

    const size_t n = spec.layers.size();

    // Resolve shapes along the chain (input edges by producing layer; -1 = input).
    std::vector<LayerShape> shapes(n);
    std::vector<std::vector<i32>> in_edges(n);
    std::vector<u64> out_elems_of(n);
    auto elems_of_edge = [&](i32 e) { return e < 0 ? spec.input_elems : out_elems_of[e]; };
    for (size_t i = 0; i < n; ++i) {
        const LayerSpec& ls = spec.layers[i];
        i32 first = ls.input_layer.value_or(static_cast<i32>(i) - 1);
        if (first >= static_cast<i32>(i) || first < -1)
            throw ConfigError("layer " + std::to_string(i) + ": input_layer must name an earlier layer");
        in_edges[i].push_back(first);
        for (i32 e : ls.extra_inputs) {
            if (e >= static_cast<i32>(i) || e < -1)
                throw ConfigError("layer " + std::to_string(i) + ": extra input must name an earlier layer");
            in_edges[i].push_back(e);
        }
        shapes[i] = shape_of(ls, elems_of_edge(first), i);
        if (ls.kind == LayerKind::Add) {
            if (in_edges[i].size() < 2)
                throw ConfigError("layer " + std::to_string(i) + ": add needs at least two inputs");
            for (i32 e : in_edges[i])
                if (elems_of_edge(e) != shapes[i].out_elems)
                    throw ConfigError("layer " + std::to_string(i) + ": add input shapes differ");
        }
        out_elems_of[i] = shapes[i].out_elems;
        dfg.total_weight_elems += shapes[i].weight_elems;
    }

    // Region allocation. Ascending first-fit degenerates to bump allocation
    // because regions are placed in a fixed order at chunk-aligned addresses.
    u64 cursor = 0;
    auto place = [&](RegionKind kind, u64 logical, i32 layer, std::optional<u32> paired) {
        TensorRegion r;
        r.id = static_cast<u32>(dfg.regions.size());
        r.kind = kind;
        r.logical_bytes = logical;
        r.size_bytes = align_chunk(std::max<u64>(logical, 1));
        r.base_addr = cursor;
        r.layer_index = layer;
        r.paired_region = paired;
        cursor += r.size_bytes;
        dfg.regions.push_back(r);
        return r.id;
    };

    // 1) weights by layer
    std::vector<std::optional<u32>> weight_of(n);
    for (size_t i = 0; i < n; ++i)
        if (shapes[i].weight_elems > 0)
            weight_of[i] = place(RegionKind::Weight, shapes[i].weight_elems * elem_bytes,
                                 static_cast<i32>(i), std::nullopt);
    // 2) the input
    dfg.input_region = place(RegionKind::Input, spec.input_elems * elem_bytes, -1, std::nullopt);
    // 3) features by layer
    std::vector<u32> feature_of(n);
    for (size_t i = 0; i < n; ++i)
        feature_of[i] = place(RegionKind::Feature, shapes[i].out_elems * elem_bytes,
                              static_cast<i32>(i), std::nullopt);

    auto region_of_edge = [&](i32 e) { return e < 0 ? dfg.input_region : feature_of[e]; };

    for (size_t i = 0; i < n; ++i) {
        const LayerSpec& ls = spec.layers[i];
        Layer layer;
        layer.kind = ls.kind;
        layer.name = ls.name.empty() ? std::string(to_string(ls.kind)) + std::to_string(i) : ls.name;
        for (i32 e : in_edges[i]) layer.input_regions.push_back(region_of_edge(e));
        layer.output_region = feature_of[i];
        layer.weight_region = weight_of[i];
        layer.macs = shapes[i].macs;
        dfg.layers.push_back(std::move(layer));
    }

    // 4) gradients (training): loss seed first, then one region per input
    // edge of each layer, allocated in backward (write) order.
    if (mode == Mode::Training) {
        place(RegionKind::Gradient, dfg.regions[feature_of[n - 1]].logical_bytes,
              static_cast<i32>(n), feature_of[n - 1]);
        for (size_t bi = 0; bi < n; ++bi) {
            size_t i = n - 1 - bi;
            for (u32 in_id : dfg.layers[i].input_regions)
                place(RegionKind::Gradient, dfg.regions[in_id].logical_bytes,
                      static_cast<i32>(i), in_id);
        }
    }

    return dfg;
}

// ---------------------------------------------------------------------------
// Schedules

std::vector<u64> feature_write_epochs(const Dfg& dfg, u32 writes_per_region) {
    std::vector<u64> epochs(dfg.regions.size(), 0);
    u64 epoch = 0;
    for (const auto& layer : dfg.layers) {
        epoch += writes_per_region;
        epochs[layer.output_region] = epoch;
    }
    return epochs;
}

namespace {

void emit_reads(std::vector<ScheduleStep>& out, const Dfg& dfg, const Layer& layer,
                const std::vector<u64>& epochs, i32 group) {
    for (u32 in_id : layer.input_regions) {
        const auto& r = dfg.region(in_id);
        ScheduleStep s;
        s.kind = StepKind::ReadRegion;
        s.region = in_id;
        s.layer = group;
        if (r.kind == RegionKind::Feature) {
            s.has_read_ctr = true;
            s.expected_read_ctr = epochs[in_id];
        }
        out.push_back(s);
    }
    if (layer.weight_region) {
        ScheduleStep s;
        s.kind = StepKind::ReadRegion;
        s.region = *layer.weight_region;
        s.layer = group;
        out.push_back(s);
    }
}

} // namespace

std::vector<ScheduleStep> schedule_inference(const Dfg& dfg, u32 writes_per_region) {
    if (writes_per_region == 0) throw ConfigError("writes_per_region must be positive");
    std::vector<ScheduleStep> steps;
    auto epochs = feature_write_epochs(dfg, writes_per_region);
    for (size_t i = 0; i < dfg.layers.size(); ++i) {
        const Layer& layer = dfg.layers[i];
        i32 group = static_cast<i32>(i);
        emit_reads(steps, dfg, layer, epochs, group);
        steps.push_back({StepKind::Compute, 0, false, 0, group});
        for (u32 t = 0; t < writes_per_region; ++t)
            steps.push_back({StepKind::WriteRegion, layer.output_region, false, 0, group});
    }
    return steps;
}

std::vector<ScheduleStep> schedule_training(const Dfg& dfg, u32 writes_per_region) {
    if (dfg.mode != Mode::Training) throw ConfigError("training schedule needs a training-mode graph");
    std::vector<ScheduleStep> steps = schedule_inference(dfg, writes_per_region);
    if (dfg.layers.empty()) return steps;
    auto epochs = feature_write_epochs(dfg, writes_per_region);
    const size_t n = dfg.layers.size();

    // Gradient regions by producing layer (write order) and by paired region
    // (read order; ids ascend because allocation follows backward order).
    std::vector<std::vector<u32>> grads_of_layer(n + 1);
    std::vector<std::vector<u32>> grads_of_paired(dfg.regions.size());
    for (const auto& r : dfg.regions)
        if (r.kind == RegionKind::Gradient) {
            if (!r.paired_region) throw SimError("gradient region without paired region");
            grads_of_layer[r.layer_index].push_back(r.id);
            grads_of_paired[*r.paired_region].push_back(r.id);
        }

    // Loss seed: read the final feature, write its gradient.
    u32 final_feature = dfg.layers[n - 1].output_region;
    i32 group = static_cast<i32>(n);
    steps.push_back({StepKind::ReadRegion, final_feature, true, epochs[final_feature], group});
    steps.push_back({StepKind::Compute, 0, false, 0, group});
    steps.push_back({StepKind::WriteRegion, grads_of_layer[n][0], false, 0, group});

    for (size_t bi = 0; bi < n; ++bi) {
        size_t i = n - 1 - bi;
        const Layer& layer = dfg.layers[i];
        group = static_cast<i32>(n + 1 + bi);
        // upstream gradients: every gradient paired with this layer's output
        for (u32 gid : grads_of_paired[layer.output_region])
            steps.push_back({StepKind::ReadRegion, gid, true, epochs[layer.output_region], group});
        emit_reads(steps, dfg, layer, epochs, group);
        steps.push_back({StepKind::Compute, 0, false, 0, group});
        for (u32 gid : grads_of_layer[i])
            steps.push_back({StepKind::WriteRegion, gid, false, 0, group});
        if (layer.weight_region)
            steps.push_back({StepKind::WriteRegion, *layer.weight_region, false, 0, group});
    }
    return steps;
}

// ---------------------------------------------------------------------------
// Layer arithmetic

Bytes layer_output(LayerKind kind, u32 write_index, const std::vector<BytesView>& reads,
                   size_t out_bytes) {
    Bytes out(out_bytes, 0);
    if (out_bytes == 0) return out;

    if (kind == LayerKind::Identity) {
        if (!reads.empty()) {
            size_t ncopy = std::min(out_bytes, reads[0].size());
            std::copy_n(reads[0].begin(), ncopy, out.begin());
        }
        return out;
    }
    if (kind == LayerKind::Add) {
        for (const auto& r : reads) {
            if (r.empty()) continue;
            for (size_t j = 0; j < out_bytes; ++j)
                out[j] = static_cast<u8>(out[j] + r[j % r.size()]);
        }
        return out;
    }

    // Fc/Conv (and every backward step): integer mixing over the
    // concatenated reads. Two data taps per output byte keep large weight
    // updates cheap while every output stays input-dependent.
    u64 total = 0;
    for (const auto& r : reads) total += r.size();
    if (total == 0) {
        for (size_t j = 0; j < out_bytes; ++j)
            out[j] = static_cast<u8>(j * 131 + write_index * 17 + 5);
        return out;
    }
    auto at = [&](u64 idx) -> u8 {
        idx %= total;
        for (const auto& r : reads) {
            if (idx < r.size()) return r[idx];
            idx -= r.size();
        }
        return 0;
    };
    for (size_t j = 0; j < out_bytes; ++j) {
        u64 h1 = (static_cast<u64>(j) * 2654435761ULL + write_index * 97 + 11);
        u64 h2 = (static_cast<u64>(j) * 40503ULL + write_index * 31 + 7);
        u32 acc = static_cast<u32>(at(h1)) * 31u + static_cast<u32>(at(h2)) * 7u +
                  static_cast<u32>(j) + write_index * 131u;
        out[j] = static_cast<u8>(acc >> 2);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Network spec serialization + presets

NetworkSpec parse_network_spec(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("network spec: ") + e.what());
    }
    try {
        NetworkSpec spec;
        spec.name = j.at("name").get<std::string>();
        spec.element_bits = j.value("element_bits", 8u);
        spec.input_elems = j.at("input_elems").get<u64>();
        for (const auto& jl : j.at("layers")) {
            LayerSpec ls;
            std::string kind = jl.at("kind").get<std::string>();
            if (kind == "fc") ls.kind = LayerKind::Fc;
            else if (kind == "conv") ls.kind = LayerKind::Conv;
            else if (kind == "add") ls.kind = LayerKind::Add;
            else if (kind == "identity") ls.kind = LayerKind::Identity;
            else throw ConfigError("network spec: unknown layer kind '" + kind + "'");
            ls.name = jl.value("name", std::string());
            ls.in = jl.value("in", u64{0});
            ls.out = jl.value("out", u64{0});
            ls.in_ch = jl.value("in_ch", u64{0});
            ls.out_ch = jl.value("out_ch", u64{0});
            ls.kernel = jl.value("kernel", u64{0});
            ls.conv_out_h = jl.value("conv_out_h", u64{0});
            ls.conv_out_w = jl.value("conv_out_w", u64{0});
            ls.out_h = jl.value("out_h", u64{0});
            ls.out_w = jl.value("out_w", u64{0});
            if (jl.contains("input_layer")) ls.input_layer = jl["input_layer"].get<i32>();
            if (jl.contains("extra_inputs"))
                for (const auto& e : jl["extra_inputs"]) ls.extra_inputs.push_back(e.get<i32>());
            spec.layers.push_back(std::move(ls));
        }
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("network spec: ") + e.what());
    }
}

std::string network_spec_to_json(const NetworkSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["element_bits"] = spec.element_bits;
    j["input_elems"] = spec.input_elems;
    j["layers"] = json::array();
    for (const auto& ls : spec.layers) {
        json jl;
        jl["kind"] = to_string(ls.kind);
        if (!ls.name.empty()) jl["name"] = ls.name;
        if (ls.kind == LayerKind::Fc) {
            jl["in"] = ls.in;
            jl["out"] = ls.out;
        } else if (ls.kind == LayerKind::Conv) {
            jl["in_ch"] = ls.in_ch;
            jl["out_ch"] = ls.out_ch;
            jl["kernel"] = ls.kernel;
            if (ls.conv_out_h) jl["conv_out_h"] = ls.conv_out_h;
            if (ls.conv_out_w) jl["conv_out_w"] = ls.conv_out_w;
            jl["out_h"] = ls.out_h;
            jl["out_w"] = ls.out_w;
        }
        if (ls.input_layer) jl["input_layer"] = *ls.input_layer;
        if (!ls.extra_inputs.empty()) jl["extra_inputs"] = ls.extra_inputs;
        j["layers"].push_back(jl);
    }
    return j.dump(2);
}

namespace {

LayerSpec fc(u64 in, u64 out) {
    LayerSpec l;
    l.kind = LayerKind::Fc;
    l.in = in;
    l.out = out;
    return l;
}

LayerSpec conv(u64 in_ch, u64 out_ch, u64 k, u64 conv_out, u64 out) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kernel = k;
    l.conv_out_h = l.conv_out_w = conv_out;
    l.out_h = l.out_w = out;
    return l;
}

NetworkSpec make_mlp_tiny() {
    NetworkSpec s;
    s.name = "mlp-tiny";
    s.element_bits = 8;
    s.input_elems = 256;
    s.layers = {fc(256, 512), fc(512, 512), fc(512, 256)};
    return s;
}

NetworkSpec make_alexnet() {
    NetworkSpec s;
    s.name = "alexnet";
    s.element_bits = 8;
    s.input_elems = 3ULL * 224 * 224;
    s.layers = {conv(3, 64, 11, 55, 27),  conv(64, 192, 5, 27, 13), conv(192, 384, 3, 13, 13),
                conv(384, 256, 3, 13, 13), conv(256, 256, 3, 13, 6), fc(9216, 4096),
                fc(4096, 4096),            fc(4096, 1000)};
    return s;
}

NetworkSpec make_vgg16() {
    NetworkSpec s;
    s.name = "vgg16";
    s.element_bits = 8;
    s.input_elems = 3ULL * 224 * 224;
    s.layers = {conv(3, 64, 3, 224, 224),   conv(64, 64, 3, 224, 112),
                conv(64, 128, 3, 112, 112), conv(128, 128, 3, 112, 56),
                conv(128, 256, 3, 56, 56),  conv(256, 256, 3, 56, 56),
                conv(256, 256, 3, 56, 28),  conv(256, 512, 3, 28, 28),
                conv(512, 512, 3, 28, 28),  conv(512, 512, 3, 28, 14),
                conv(512, 512, 3, 14, 14),  conv(512, 512, 3, 14, 14),
                conv(512, 512, 3, 14, 7),   fc(25088, 4096),
                fc(4096, 4096),             fc(4096, 1000)};
    return s;
}

// Bottleneck residual networks: stem, one projected bottleneck block per
// stage, classifier. Pooling is folded into the declared output dims; the
// last block collapses to 1×1 so the classifier input is channel-count wide.
NetworkSpec make_resnet50_like() {
    NetworkSpec s;
    s.name = "resnet50-like";
    s.element_bits = 8;
    s.input_elems = 3ULL * 224 * 224;

    auto block = [&](u64 in_ch, u64 mid, u64 out_ch, u64 dim, u64 out_dim, i32 block_input) {
        LayerSpec a = conv(in_ch, mid, 1, dim, dim);
        a.input_layer = block_input;
        LayerSpec b = conv(mid, mid, 3, dim, dim);
        LayerSpec c = conv(mid, out_ch, 1, dim, out_dim);
        LayerSpec proj = conv(in_ch, out_ch, 1, dim, out_dim);
        proj.input_layer = block_input;
        LayerSpec add;
        add.kind = LayerKind::Add;
        i32 c_index = static_cast<i32>(s.layers.size()) + 2;
        add.extra_inputs = {c_index};
        s.layers.push_back(a);
        s.layers.push_back(b);
        s.layers.push_back(c);
        s.layers.push_back(proj);
        s.layers.push_back(add);
    };

    s.layers.push_back(conv(3, 64, 7, 112, 56)); // stem, pool folded
    block(64, 64, 256, 56, 56, 0);
    block(256, 128, 512, 28, 28, 5);
    block(512, 256, 1024, 14, 14, 10);
    block(1024, 512, 2048, 7, 1, 15); // global pool folded into the block tail
    s.layers.push_back(fc(2048, 1000));
    return s;
}

} // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"mlp-tiny", "alexnet", "vgg16", "resnet50-like"};
    return names;
}

NetworkSpec preset(const std::string& name) {
    if (name == "mlp-tiny") return make_mlp_tiny();
    if (name == "alexnet") return make_alexnet();
    if (name == "vgg16") return make_vgg16();
    if (name == "resnet50-like") return make_resnet50_like();
    throw ConfigError("unknown network preset '" + name + "'");
}

} // namespace guardnn::workload

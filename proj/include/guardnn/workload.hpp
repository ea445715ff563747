#pragma once

#include <optional>
#include <string>
#include <vector>

#include "guardnn/common.hpp"

// DNN dataflow graphs over a flat physical address space, plus the
// deterministic coarse-grained access schedule the accelerator executes.
namespace guardnn::workload {

constexpr u64 kChunkBytes = 512; // protection/alignment granule

enum class RegionKind : u8 { Input, Weight, Feature, Gradient };
enum class LayerKind : u8 { Fc, Conv, Add, Identity };
enum class Mode : u8 { Inference, Training };

const char* to_string(RegionKind k);
const char* to_string(LayerKind k);
const char* to_string(Mode m);

struct TensorRegion {
    u32 id = 0;
    RegionKind kind = RegionKind::Feature;
    u64 base_addr = 0;
    u64 size_bytes = 0;    // padded to a multiple of kChunkBytes
    u64 logical_bytes = 0; // exact tensor payload
    i32 layer_index = -1;  // producing layer; -1 for the input region
    // Gradients only: the region whose write-time version this gradient reuses.
    std::optional<u32> paired_region;

    u64 chunks() const { return size_bytes / kChunkBytes; }
    u64 end() const { return base_addr + size_bytes; }
};

struct Layer {
    std::string name;
    LayerKind kind = LayerKind::Fc;
    std::vector<u32> input_regions; // features (or the input region)
    u32 output_region = 0;
    std::optional<u32> weight_region;
    u64 macs = 0; // dense compute-work estimate, for the timing model only
};

struct Dfg {
    Mode mode = Mode::Inference;
    std::string name;
    std::vector<TensorRegion> regions;
    std::vector<Layer> layers;
    u32 input_region = 0;

    const TensorRegion& region(u32 id) const;
    u64 address_space_bytes() const; // end of the last region, chunk-aligned
    u64 total_weight_elems = 0;      // parameter count across all layers
};

// One layer of a network description. Shapes follow the chain rule: layer i
// reads layer i-1's output (fan-in edges may be added for Add layers).
struct LayerSpec {
    LayerKind kind = LayerKind::Fc;
    std::string name;      // optional; defaults to kind+index
    // fc
    u64 in = 0, out = 0;
    // conv: kernel k×k, dense MACs counted over conv_out, feature stored at out
    u64 in_ch = 0, out_ch = 0, kernel = 0;
    u64 conv_out_h = 0, conv_out_w = 0; // defaults to out_h/out_w
    u64 out_h = 0, out_w = 0;           // post-pooling feature dims
    // add/identity: shapes derived from inputs
    // Chain override: which earlier layer's output this layer reads as its
    // first input (-1 = the network input). Defaults to the previous layer.
    std::optional<i32> input_layer;
    // Extra fan-in edges beyond the first input, by producing layer index
    // (-1 = the network input). Used by Add (residual) layers.
    std::vector<i32> extra_inputs;
};

struct NetworkSpec {
    std::string name;
    u32 element_bits = 8; // 6, 8, or 16; rounded up to whole bytes per region
    // input tensor (elements); conv networks give channels×h×w
    u64 input_elems = 0;
    std::vector<LayerSpec> layers;
};

// Shipped presets: "mlp-tiny", "alexnet", "vgg16", "resnet50-like".
const std::vector<std::string>& preset_names();
NetworkSpec preset(const std::string& name);
NetworkSpec parse_network_spec(const std::string& json_text);
std::string network_spec_to_json(const NetworkSpec& spec);

// Builds the graph and lays regions out first-fit ascending: weights (by
// layer), then the input, then features (by layer), then gradients (training
// only, one per consumer edge plus the loss seed), each at the lowest
// chunk-aligned address not overlapping an earlier region.
Dfg build_network(const NetworkSpec& spec, Mode mode);

enum class StepKind : u8 { ReadRegion, WriteRegion, Compute };

struct ScheduleStep {
    StepKind kind = StepKind::Compute;
    u32 region = 0;             // memory steps
    bool has_read_ctr = false;  // feature/gradient reads carry the write epoch
    u64 expected_read_ctr = 0;
    i32 layer = -1;             // owning layer (schedule position for backward)
};

// Inference: per layer, read inputs, read weights, compute, write output.
// writes_per_region > 1 models tiling that rewrites each output that many
// times; every write advances the feature epoch.
std::vector<ScheduleStep> schedule_inference(const Dfg& dfg, u32 writes_per_region = 1);

// Training: the forward schedule, a loss-seed step (read the final feature,
// write its gradient), then per layer in reverse: read the gradients of the
// layer output, read the layer inputs and weights, compute, write one
// gradient per input edge and the updated weights.
std::vector<ScheduleStep> schedule_training(const Dfg& dfg, u32 writes_per_region = 1);

// Write epochs the schedule promises: for every feature region, the CTR_F,W
// value after its last scheduled write (what readers must supply).
std::vector<u64> feature_write_epochs(const Dfg& dfg, u32 writes_per_region = 1);

// ---------------------------------------------------------------------------
// Layer arithmetic. Byte-level, integer-only, shared verbatim between the
// simulated device and the harness reference so outputs compare bit-exactly.
// `reads` is every plaintext the step read, in schedule order (forward:
// inputs then weights; backward: upstream gradients, inputs, weights).
// write_index selects which write payload of a multi-output step is produced
// (forward: 0 = output feature; backward: one per gradient edge, then the
// updated weights). Identity copies reads[0]; Add sums element-wise.

Bytes layer_output(LayerKind kind, u32 write_index, const std::vector<BytesView>& reads,
                   size_t out_bytes);

} // namespace guardnn::workload

#include "guardnn/perfmodel.hpp"

namespace guardnn::perfmodel {

namespace {

u64 ceil_div(u64 a, u64 b) {
    return b ? (a + b - 1) / b : 0;
}

} // namespace

CellPerf analyze(const harness::SessionResult& result, harness::SchemeId scheme,
                 const TimingParams& params) {
    CellPerf cell;
    cell.scheme = scheme;
    const auto& buckets = result.trace.groups;
    for (const auto& b : buckets) cell.traffic += b;
    using memprot::Purpose;
    cell.data_tx = cell.traffic.by(Purpose::Data);
    cell.mac_tx = cell.traffic.by(Purpose::Mac);
    cell.vn_tx = cell.traffic.by(Purpose::Vn);
    cell.tree_tx = cell.traffic.by(Purpose::Tree);
    cell.total_tx = cell.traffic.total();

    const bool protected_scheme = scheme != harness::SchemeId::Np;
    const bool tree_engine = scheme == harness::SchemeId::Bp;
    u64 compute_total = 0, memory_total = 0;
    cell.groups.reserve(buckets.size());
    for (size_t g = 0; g < buckets.size(); ++g) {
        GroupTiming t;
        const bool flush_bucket = g >= result.group_macs.size();
        u64 macs = flush_bucket ? 0 : result.group_macs[g];
        t.compute_cycles = ceil_div(macs, params.macs_per_cycle);
        t.memory_cycles =
            ceil_div(buckets[g].total() * params.transaction_bytes, params.bandwidth_bytes_per_cycle);
        if (tree_engine)
            t.stall_cycles = buckets[g].metadata_reads() * params.metadata_stall_cycles;
        t.cycles = std::max(t.compute_cycles, t.memory_cycles) + t.stall_cycles;
        if (protected_scheme && !flush_bucket && buckets[g].total() > 0)
            t.cycles += params.layer_fill_cycles;
        compute_total += t.compute_cycles;
        memory_total += t.memory_cycles;
        cell.cycles += t.cycles;
        cell.groups.push_back(t);
    }
    cell.memory_bound = memory_total >= compute_total;
    return cell;
}

void relativize(CellPerf& cell, const CellPerf& np) {
    if (np.total_tx > 0)
        cell.traffic_increase = static_cast<double>(cell.total_tx) / static_cast<double>(np.total_tx);
    if (np.cycles > 0)
        cell.slowdown = static_cast<double>(cell.cycles) / static_cast<double>(np.cycles);
}

u64 mac_lines_for_pass(u64 base_addr, u64 size_bytes, u64 mac_width_bytes) {
    if (size_bytes == 0) return 0;
    u64 tags_per_line = memprot::kLineBytes / mac_width_bytes;
    u64 c0 = base_addr / memprot::kChunkBytes;
    u64 c1 = (base_addr + size_bytes - 1) / memprot::kChunkBytes;
    return c1 / tags_per_line - c0 / tags_per_line + 1;
}

CiTrafficOracle ci_oracle(const workload::Dfg& dfg, u32 writes_per_region,
                          u64 mac_width_bytes) {
    CiTrafficOracle oracle;
    auto schedule = dfg.mode == workload::Mode::Training
                        ? workload::schedule_training(dfg, writes_per_region)
                        : workload::schedule_inference(dfg, writes_per_region);
    i32 max_group = -1;
    for (const auto& s : schedule) max_group = std::max(max_group, s.layer);
    oracle.group_mac_tx.assign(static_cast<size_t>(max_group + 2), 0); // + flush bucket
    for (const auto& s : schedule) {
        if (s.kind == workload::StepKind::Compute) continue;
        const auto& r = dfg.region(s.region);
        oracle.data_tx += r.size_bytes / memprot::kLineBytes;
        u64 lines = mac_lines_for_pass(r.base_addr, r.size_bytes, mac_width_bytes);
        oracle.mac_tx += lines;
        oracle.group_mac_tx[static_cast<size_t>(s.layer)] += lines;
    }
    return oracle;
}

} // namespace guardnn::perfmodel

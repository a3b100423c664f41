#include "cla/strategies.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cla::strat {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::finetuning: return "finetuning";
        case Kind::er: return "er";
        case Kind::lump: return "lump";
        case Kind::cla_b: return "cla_b";
        case Kind::cla_e: return "cla_e";
        case Kind::cla_r: return "cla_r";
        case Kind::cassle: return "cassle";
        case Kind::cassle_r: return "cassle_r";
        case Kind::iid: return "iid";
    }
    return "finetuning";
}

Kind kind_from_name(const std::string& s) {
    if (s == "finetuning") return Kind::finetuning;
    if (s == "er") return Kind::er;
    if (s == "lump") return Kind::lump;
    if (s == "cla_b") return Kind::cla_b;
    if (s == "cla_e") return Kind::cla_e;
    if (s == "cla_r") return Kind::cla_r;
    if (s == "cassle") return Kind::cassle;
    if (s == "cassle_r") return Kind::cassle_r;
    if (s == "iid") return Kind::iid;
    throw UsageError("unknown strategy: " + s);
}

bool StrategyConfig::uses_buffer() const {
    return kind == Kind::er || kind == Kind::lump || kind == Kind::cla_e || kind == Kind::cla_r ||
           kind == Kind::cassle_r;
}

bool StrategyConfig::extends_batch() const {
    return kind == Kind::er || kind == Kind::cla_e || kind == Kind::cla_r || kind == Kind::cassle_r;
}

bool StrategyConfig::needs_ema() const { return kind == Kind::cla_b || kind == Kind::cla_e; }

bool StrategyConfig::needs_boundaries() const { return kind == Kind::cassle || kind == Kind::cassle_r; }

bool StrategyConfig::stores_features() const {
    return kind == Kind::cla_r || (uses_buffer() && buffer_policy == replay::Policy::minred);
}

align::Variant StrategyConfig::variant() const {
    switch (kind) {
        case Kind::cla_b: return align::Variant::cla_b;
        case Kind::cla_e: return align::Variant::cla_e;
        case Kind::cla_r: return align::Variant::cla_r;
        case Kind::cassle: return align::Variant::cassle;
        case Kind::cassle_r: return align::Variant::cassle_r;
        default: return align::Variant::none;
    }
}

budget::Composition StrategyConfig::composition() const {
    return extends_batch() ? budget::Composition::stream_plus_replay : budget::Composition::stream_only;
}

void StrategyConfig::validate(std::size_t b_s) const {
    if (b_s == 0) throw DimensionError("StrategyConfig: b_s must be positive");
    if (n_p == 0) throw DimensionError("StrategyConfig: n_p must be positive");
    if (!(learning_rate > 0.0)) throw DimensionError("StrategyConfig: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DimensionError("StrategyConfig: momentum in [0,1)");
    if (!(weight_decay >= 0.0)) throw DimensionError("StrategyConfig: weight decay >= 0");
    if (!(temperature > 0.0)) throw DimensionError("StrategyConfig: temperature > 0");
    if (extends_batch() && b_r == 0)
        throw DimensionError("StrategyConfig: extending strategies need b_r > 0");
    if (!extends_batch() && kind != Kind::lump && b_r != 0)
        throw DimensionError("StrategyConfig: b_r is only meaningful for extending strategies");
    if (needs_ema() && !(tau >= 0.0 && tau <= 1.0))
        throw DimensionError("StrategyConfig: tau must lie in [0,1]");
    if (uses_buffer() && buffer_capacity == 0)
        throw DimensionError("StrategyConfig: buffer capacity must be positive");
    if (kind == Kind::lump && !(lump_alpha > 0.0))
        throw DimensionError("StrategyConfig: lump_alpha must be positive");
    if (kind == Kind::iid && n_p != 1)
        throw DimensionError("StrategyConfig: the iid baseline uses n_p = 1");
    if (!(omega >= 0.0)) throw DimensionError("StrategyConfig: omega must be non-negative");
}

budget::BudgetSpec StrategyConfig::budget_spec(std::size_t b_s, std::size_t N) const {
    if (kind == Kind::iid)
        throw ProtocolError("StrategyConfig: the iid baseline is budget-targeted, not stream-scheduled");
    budget::BudgetSpec s;
    s.n_v = 2;
    s.b_s = b_s;
    s.b_r = extends_batch() ? b_r : 0;
    s.b = b_s + s.b_r;
    s.n_p = n_p;
    s.N = N;
    s.composition = composition();
    return s;
}

namespace {

double beta_sample(Rng& rng, double alpha) {
    // Johnk's method for Beta(alpha, alpha)
    for (int it = 0; it < 10000; ++it) {
        const double x = std::pow(rng.uniform(), 1.0 / alpha);
        const double y = std::pow(rng.uniform(), 1.0 / alpha);
        const double s = x + y;
        if (s > 0.0 && s <= 1.0) return x / s;
    }
    return 0.5;
}

Tensor rows_of(const Tensor& v, std::size_t start, std::size_t count) {
    Tensor t = Tensor::zeros({count, v.cols()});
    std::copy(v.data.begin() + static_cast<std::ptrdiff_t>(start * v.cols()),
              v.data.begin() + static_cast<std::ptrdiff_t>((start + count) * v.cols()), t.data.begin());
    return t;
}

}  // namespace

OnlineTrainer::OnlineTrainer(const nets::NetworkArch& arch, StrategyConfig cfg,
                             stream::AugmentationPolicy aug, std::size_t b_s,
                             bool boundaries_visible, std::uint64_t seed, std::uint64_t target_cbp)
    : cfg_(std::move(cfg)),
      aug_(aug),
      b_s_(b_s),
      boundaries_visible_(boundaries_visible),
      opt_(cfg_.learning_rate, cfg_.momentum, cfg_.weight_decay),
      aug_rng_(Rng::mix(seed, 2)),
      strat_rng_(Rng::mix(seed, 3)),
      ledger_(target_cbp) {
    cfg_.validate(b_s);
    Rng init_rng(Rng::mix(seed, 1));
    nets_ = nets::NetworkSet::make(arch, init_rng);
    if (cfg_.needs_ema()) nets_.ema_theta = nets::snapshot_frozen(nets_.theta);
    if (cfg_.uses_buffer())
        buffer_ = replay::Buffer(cfg_.buffer_policy, cfg_.buffer_capacity, cfg_.stores_features(),
                                 Rng::mix(seed, 4));
}

void OnlineTrainer::on_experience_boundary() {
    if (!boundaries_visible_)
        throw ProtocolError("boundary event on a hidden-boundary stream");
    if (!cfg_.needs_boundaries()) return;
    nets_.frozen_theta = nets::snapshot_frozen(nets_.theta);
}

std::vector<Tensor*> OnlineTrainer::trainables() {
    std::vector<Tensor*> out = nets_.theta.params();
    if (cfg_.objective == ssl::Objective::simsiam)
        for (Tensor* t : nets_.predictor.params()) out.push_back(t);
    if (cfg_.variant() != align::Variant::none)
        for (Tensor* t : nets_.align_proj.params()) out.push_back(t);
    return out;
}

OnlineTrainer::PassResult OnlineTrainer::run_pass(const Tensor& x, bool last_pass) {
    const std::size_t stream_rows = x.rows();
    const std::size_t d = x.cols();
    const std::size_t f = nets_.theta.feature_width();

    // ---- batch composition (Alg. 2: buffer sampled inside every pass)
    Tensor xin;
    std::size_t replay_rows = 0;
    bool cold = false;
    Tensor zstar;
    std::vector<replay::Buffer::Handle> handles;

    if (cfg_.extends_batch()) {
        const std::size_t br = cfg_.b_r;
        xin = Tensor::zeros({stream_rows + br, d});
        std::copy(x.data.begin(), x.data.end(), xin.data.begin());
        if (buffer_.size() == 0) {
            // Cold start: the batch is padded with stream samples so its
            // size (and the backward-pass count) stays fixed; the
            // regularizer falls back to 0 until the buffer holds data.
            cold = true;
            for (std::size_t i = 0; i < br; ++i) {
                const std::size_t j = strat_rng_.below(stream_rows);
                std::copy(&x.data[j * d], &x.data[(j + 1) * d], &xin.data[(stream_rows + i) * d]);
            }
        } else {
            handles = buffer_.sample(br);
            if (cfg_.kind == Kind::cla_r) zstar = Tensor::zeros({br, f});
            for (std::size_t i = 0; i < br; ++i) {
                const replay::BufferEntry& e = buffer_.entry(handles[i]);
                std::copy(e.sample.begin(), e.sample.end(), &xin.data[(stream_rows + i) * d]);
                if (cfg_.kind == Kind::cla_r) {
                    if (!e.has_feature)
                        throw DimensionError("cla_r: sampled exemplar stores no feature");
                    std::copy(e.feature.begin(), e.feature.end(), &zstar.data[i * f]);
                }
            }
        }
        replay_rows = br;
    } else if (cfg_.kind == Kind::lump && buffer_.size() > 0) {
        handles = buffer_.sample(stream_rows);
        xin = x;
        for (std::size_t i = 0; i < stream_rows; ++i) {
            const double lam = beta_sample(strat_rng_, cfg_.lump_alpha);
            const replay::BufferEntry& e = buffer_.entry(handles[i]);
            for (std::size_t j = 0; j < d; ++j)
                xin.data[i * d + j] = lam * x.data[i * d + j] + (1.0 - lam) * e.sample[j];
        }
        handles.clear();
    } else {
        xin = x;
    }

    // ---- two augmented views
    auto views = stream::make_views(xin, aug_, aug_rng_);
    Tensor& x1 = views.first;
    Tensor& x2 = views.second;

    ad::Graph g;
    const std::size_t batch_rows = xin.rows();
    g.backward_hook = [this, batch_rows] { ledger_.count_backward(2, batch_rows); };

    ad::Var z1 = nets_.theta.project(g, g.constant(x1), true);
    ad::Var z2 = nets_.theta.project(g, g.constant(x2), true);

    // EMA update precedes target computation (pseudocode line order)
    if (cfg_.needs_ema()) nets::ema_update(nets_.theta, *nets_.ema_theta, cfg_.tau);

    ad::Var lssl = ssl::ssl_loss(g, cfg_.objective, z1, z2, nets_.predictor, true, cfg_.temperature);

    ad::Var reg{};
    bool has_reg = false;
    aphi_in_graph_ = false;
    const double omega_eff = cfg_.variant() == align::Variant::cassle ||
                                     cfg_.variant() == align::Variant::cassle_r
                                 ? 1.0
                                 : cfg_.omega;

    switch (cfg_.kind) {
        case Kind::cla_b: {
            reg = align::cla_b_reg(g, z1, z2, nets_.align_proj, *nets_.ema_theta, x1, x2, true);
            has_reg = true;
            aphi_in_graph_ = true;
            break;
        }
        case Kind::cla_e: {
            if (cold) {
                reg = g.constant(Tensor::scalar(0.0));
            } else {
                ad::Var zr1 = ad::slice_rows(z1, stream_rows, replay_rows);
                ad::Var zr2 = ad::slice_rows(z2, stream_rows, replay_rows);
                reg = align::cla_e_reg(g, zr1, zr2, nets_.align_proj, *nets_.ema_theta,
                                       rows_of(x1, stream_rows, replay_rows),
                                       rows_of(x2, stream_rows, replay_rows), true);
                aphi_in_graph_ = true;
            }
            has_reg = true;
            break;
        }
        case Kind::cla_r: {
            if (cold) {
                reg = g.constant(Tensor::scalar(0.0));
            } else {
                ad::Var zr1 = ad::slice_rows(z1, stream_rows, replay_rows);
                ad::Var zr2 = ad::slice_rows(z2, stream_rows, replay_rows);
                reg = align::cla_r_reg(g, zr1, zr2, nets_.align_proj, g.constant(zstar), true);
                aphi_in_graph_ = true;
            }
            has_reg = true;
            break;
        }
        case Kind::cassle: {
            if (nets_.frozen_theta) {
                reg = align::cassle_reg(g, z1, z2, nets_.align_proj, *nets_.frozen_theta, x1, x2,
                                        cfg_.objective, &nets_.predictor, true, cfg_.temperature);
                aphi_in_graph_ = true;
            } else {
                reg = g.constant(Tensor::scalar(0.0));  // before the first boundary
            }
            has_reg = true;
            break;
        }
        case Kind::cassle_r: {
            if (nets_.frozen_theta && !cold) {
                ad::Var zr1 = ad::slice_rows(z1, stream_rows, replay_rows);
                ad::Var zr2 = ad::slice_rows(z2, stream_rows, replay_rows);
                reg = align::cassle_reg(g, zr1, zr2, nets_.align_proj, *nets_.frozen_theta,
                                        rows_of(x1, stream_rows, replay_rows),
                                        rows_of(x2, stream_rows, replay_rows), cfg_.objective,
                                        &nets_.predictor, true, cfg_.temperature);
                aphi_in_graph_ = true;
            } else {
                reg = g.constant(Tensor::scalar(0.0));
            }
            has_reg = true;
            break;
        }
        default:
            break;
    }

    ad::Var total = has_reg ? align::total_loss(lssl, reg, omega_eff) : lssl;

    // ---- stash last-pass values consumed by the buffer update
    if (last_pass) {
        last_stream_feat_.clear();
        last_zr1_.clear();
        last_zr2_.clear();
        last_handles_.clear();
        if (cfg_.uses_buffer() && cfg_.stores_features()) {
            const Tensor& Z1 = g.value(z1);
            const Tensor& Z2 = g.value(z2);
            last_stream_feat_.assign(stream_rows, std::vector<double>(f));
            for (std::size_t i = 0; i < stream_rows; ++i)
                for (std::size_t k = 0; k < f; ++k)
                    last_stream_feat_[i][k] = 0.5 * (Z1.data[i * f + k] + Z2.data[i * f + k]);
        }
        if (cfg_.kind == Kind::cla_r && !cold && !handles.empty()) {
            const Tensor& Z1 = g.value(z1);
            const Tensor& Z2 = g.value(z2);
            last_zr1_.assign(replay_rows, std::vector<double>(f));
            last_zr2_.assign(replay_rows, std::vector<double>(f));
            for (std::size_t i = 0; i < replay_rows; ++i)
                for (std::size_t k = 0; k < f; ++k) {
                    last_zr1_[i][k] = Z1.data[(stream_rows + i) * f + k];
                    last_zr2_[i][k] = Z2.data[(stream_rows + i) * f + k];
                }
            last_handles_ = handles;
        }
    }

    g.backward(total);

    // Alignment-bearing variants keep a_phi in the stable optimizer list;
    // passes that never forwarded it contribute zero gradient.
    if (cfg_.variant() != align::Variant::none && !aphi_in_graph_)
        for (Tensor* t : nets_.align_proj.params()) t->ensure_grad();

    nets::sgd_step(trainables(), opt_);
    global_step_++;

    PassResult r;
    r.total = g.scalar_value(total);
    r.ssl = g.scalar_value(lssl);
    r.reg_weighted = has_reg && omega_eff != 0.0 ? omega_eff * g.scalar_value(reg) : 0.0;
    return r;
}

std::vector<StepTrace> OnlineTrainer::process(const Tensor& x, std::size_t experience_for_log) {
    if (x.rows() == 0) throw DimensionError("OnlineTrainer::process: empty minibatch");
    std::vector<StepTrace> out;
    out.reserve(cfg_.n_p);
    for (std::size_t p = 0; p < cfg_.n_p; ++p) {
        const auto t0 = std::chrono::steady_clock::now();
        const PassResult r = run_pass(x, p + 1 == cfg_.n_p);
        StepTrace tr;
        tr.step = global_step_ - 1;
        tr.experience = experience_for_log;
        tr.loss_total = r.total;
        tr.loss_ssl = r.ssl;
        tr.loss_reg = r.reg_weighted;
        tr.cbp_so_far = ledger_.counted();
        if (record_wall_time_) {
            const auto t1 = std::chrono::steady_clock::now();
            tr.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
        out.push_back(tr);
        if (after_pass_hook) after_pass_hook(*this);
    }

    // buffer update once per stream minibatch, after the n_p passes
    if (cfg_.uses_buffer()) {
        const std::size_t d = x.cols();
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::vector<double> sample(&x.data[i * d], &x.data[(i + 1) * d]);
            if (cfg_.stores_features())
                buffer_.insert(sample, &last_stream_feat_[i]);
            else
                buffer_.insert(sample, nullptr);
        }
        if (cfg_.kind == Kind::cla_r && !last_handles_.empty())
            buffer_.update_features(last_handles_, last_zr1_, last_zr2_);
    }
    return out;
}

void OnlineTrainer::export_state(RunState& st) const {
    st.nets = nets_;
    st.opt = opt_;
    st.has_buffer = cfg_.uses_buffer();
    if (st.has_buffer) st.buffer = buffer_;
    st.aug_rng = aug_rng_.serialize();
    st.strat_rng = strat_rng_.serialize();
    st.ledger_counted = ledger_.counted();
    st.ledger_target = ledger_.target();
    st.global_step = global_step_;
}

void OnlineTrainer::import_state(const RunState& st) {
    nets_ = st.nets;
    opt_ = st.opt;
    if (st.has_buffer != cfg_.uses_buffer())
        throw IntegrityError("import_state: buffer presence does not match the strategy");
    if (st.has_buffer) buffer_ = st.buffer;
    aug_rng_ = Rng::deserialize(st.aug_rng);
    strat_rng_ = Rng::deserialize(st.strat_rng);
    ledger_.set_target(st.ledger_target);
    ledger_.restore_count(st.ledger_counted);
    global_step_ = static_cast<std::size_t>(st.global_step);
}

// ---- run-state persistence ---------------------------------------------------

namespace {
constexpr char kRunStateMagic[8] = {'C', 'L', 'A', 'R', 'U', 'N', 'S', '1'};
}

void RunState::save_file(const std::string& path) const {
    binio::Writer w;
    arch.save(w);
    nets.save(w);
    opt.save(w);
    w.u8(has_buffer ? 1 : 0);
    if (has_buffer) buffer.save(w);
    w.str(aug_rng);
    w.str(strat_rng);
    w.u64(ledger_counted);
    w.u64(ledger_target);
    w.u64(global_step);
    w.u64(batches_consumed);
    w.f64_vec(record.per_experience);
    w.f64(final_acc);
    w.u64(final_probe_seed);
    w.u64(dataset_fingerprint);
    w.u64(plan_T);
    w.u64(plan_seed);
    binio::write_file(path, kRunStateMagic, 1, w);
}

RunState RunState::load_file(const std::string& path) {
    const auto payload = binio::read_file(path, kRunStateMagic, 1);
    binio::Reader r(payload);
    RunState st;
    st.arch = nets::NetworkArch::load(r);
    st.nets = nets::NetworkSet::load(r);
    st.opt = nets::SgdState::load(r);
    st.has_buffer = r.u8() != 0;
    if (st.has_buffer) st.buffer = replay::Buffer::load(r);
    st.aug_rng = r.str();
    st.strat_rng = r.str();
    st.ledger_counted = r.u64();
    st.ledger_target = r.u64();
    st.global_step = r.u64();
    st.batches_consumed = r.u64();
    st.record.per_experience = r.f64_vec();
    st.final_acc = r.f64();
    st.final_probe_seed = r.u64();
    st.dataset_fingerprint = r.u64();
    st.plan_T = r.u64();
    st.plan_seed = r.u64();
    if (!r.done()) throw IntegrityError("run state: trailing bytes");
    return st;
}

std::uint64_t dataset_fingerprint(const stream::Dataset& d) {
    binio::Writer w;
    w.u64(d.size());
    w.u64(d.dim);
    w.u64(d.class_count);
    w.f64_vec(d.inputs);
    for (int l : d.labels) w.i64(l);
    const auto& b = w.bytes();
    const std::uint32_t lo = binio::crc32(b.data(), b.size());
    const std::uint32_t hi = binio::crc32(b.data(), b.size() / 2);
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

// ---- experiment driver ---------------------------------------------------------

namespace {

double probe_accuracy_now(const stream::Dataset& data, const stream::StreamPlan& plan,
                          const nets::LearnerNet& theta, const eval::ProbeConfig& cfg,
                          std::uint64_t probe_seed) {
    const auto train_idx = plan.train_indices_sorted();
    const auto val_idx = plan.val_indices_sorted();
    Tensor ftr = eval::extract_features(theta, data, train_idx);
    Tensor fva = eval::extract_features(theta, data, val_idx);
    std::vector<int> ytr(train_idx.size()), yva(val_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) ytr[i] = data.labels[train_idx[i]];
    for (std::size_t i = 0; i < val_idx.size(); ++i) yva[i] = data.labels[val_idx[i]];
    const eval::Probe p =
        eval::train_probe(ftr, ytr, fva, yva, data.class_count, cfg, probe_seed);
    return p.val_accuracy;
}

}  // namespace

RunResult run_experiment(const stream::Dataset& data, const stream::StreamPlan& plan,
                         const stream::AugmentationPolicy& aug, const nets::NetworkArch& arch,
                         const StrategyConfig& cfg, std::uint64_t seed, const RunOptions& opt) {
    cfg.validate(plan.b_s);
    if (cfg.kind == Kind::iid)
        throw UsageError("run_experiment drives stream strategies; use run_iid for the iid baseline");
    if (cfg.needs_boundaries()) plan.require_boundaries();

    const budget::BudgetSpec spec = cfg.budget_spec(plan.b_s, plan.train_size());
    const std::uint64_t declared = budget::cbp(spec);

    OnlineTrainer tr(arch, cfg, aug, plan.b_s, plan.boundaries_visible, seed, declared);
    tr.set_record_wall_time(opt.record_wall_time);

    RunResult res;
    res.cbp_declared = declared;
    std::uint64_t final_probe_seed = 0;
    std::size_t start_batch = 0;

    if (!opt.resume_from.empty()) {
        const RunState st = RunState::load_file(opt.resume_from);
        if (st.dataset_fingerprint != dataset_fingerprint(data))
            throw IntegrityError("resume: checkpoint was trained on a different dataset");
        tr.import_state(st);
        res.record = st.record;
        start_batch = static_cast<std::size_t>(st.batches_consumed);
        final_probe_seed = st.final_probe_seed;
    }

    stream::StreamCursor cur;
    cur.next = start_batch;
    std::size_t processed = start_batch;
    while (auto mb = stream::next_minibatch(data, plan, cur)) {
        if (cfg.needs_boundaries() && mb->index > 0 &&
            plan.schedule[mb->index].experience != plan.schedule[mb->index - 1].experience)
            tr.on_experience_boundary();
        auto traces = tr.process(mb->x, mb->experience);
        res.traces.insert(res.traces.end(), traces.begin(), traces.end());
        processed++;
        if (mb->last_of_experience && opt.probe_each_experience) {
            const std::uint64_t pseed = Rng::mix(seed, 0x9100 + mb->experience);
            const double acc = probe_accuracy_now(data, plan, tr.nets().theta, opt.probe, pseed);
            res.record.per_experience.push_back(acc);
            res.traces.back().probe_acc = acc;
            final_probe_seed = pseed;
        }
        if (opt.stop_after_batches > 0 && processed >= opt.stop_after_batches) break;
    }

    if (!res.record.per_experience.empty()) {
        const auto [f, a] = eval::final_and_average_accuracy(res.record);
        res.final_acc = f;
        res.avg_acc = a;
    }
    res.cbp_counted = tr.ledger().counted();
    res.ledger_result = budget::ledger_check(tr.ledger(), spec);
    res.batches_consumed = processed;
    if (processed == plan.schedule.size() && res.ledger_result.breach)
        throw BudgetBreach(res.ledger_result.message);

    if (!opt.csv_path.empty())
        write_run_csv(opt.csv_path, opt.run_id.empty() ? cfg.name() : opt.run_id, seed, cfg.name(),
                      ssl::objective_name(cfg.objective), res.traces);
    if (!opt.checkpoint_path.empty()) {
        RunState st;
        tr.export_state(st);
        st.arch = arch;
        st.batches_consumed = processed;
        st.record = res.record;
        st.final_acc = res.record.per_experience.empty() ? -1.0 : res.record.per_experience.back();
        st.final_probe_seed = final_probe_seed;
        st.dataset_fingerprint = dataset_fingerprint(data);
        st.plan_T = plan.T;
        st.plan_seed = seed;
        st.save_file(opt.checkpoint_path);
    }
    return res;
}

IidRunResult run_iid(const stream::Dataset& data, const std::vector<std::size_t>& train_idx,
                     const std::vector<std::size_t>& val_idx, const stream::AugmentationPolicy& aug,
                     const nets::NetworkArch& arch, const StrategyConfig& cfg, std::uint64_t seed,
                     const IidOptions& opt, nets::NetworkSet* warm_start, nets::SgdState* warm_opt,
                     std::uint64_t cbp_offset) {
    if (opt.b == 0 || opt.b > train_idx.size())
        throw DimensionError("run_iid: batch size must be in [1, N]");

    StrategyConfig inner = cfg;
    inner.kind = Kind::finetuning;
    inner.n_p = 1;
    inner.b_r = 0;
    inner.omega = 0.0;

    OnlineTrainer tr(arch, inner, aug, opt.b, false, seed, opt.target_cbp);
    tr.set_record_wall_time(opt.record_wall_time);
    if (warm_start != nullptr) {
        tr.nets() = *warm_start;
        if (warm_opt != nullptr) {
            nets::SgdState st = *warm_opt;
            st.learning_rate = cfg.learning_rate;
            st.momentum = cfg.momentum;
            st.weight_decay = cfg.weight_decay;
            // the warm list may carry extra tail entries (e.g. a_phi)
            const std::size_t need =
                tr.nets().theta.params().size() +
                (cfg.objective == ssl::Objective::simsiam ? tr.nets().predictor.params().size() : 0);
            if (st.velocity.size() > need) st.velocity.resize(need);
            tr.optimizer() = std::move(st);
        }
    }

    IidRunResult res;
    std::vector<int> yva(val_idx.size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) yva[i] = data.labels[val_idx[i]];
    std::vector<int> ytr(train_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) ytr[i] = data.labels[train_idx[i]];

    std::size_t probe_counter = 0;
    auto probe_now = [&]() {
        const std::uint64_t pseed = (probe_counter == 0 && opt.first_probe_seed != 0)
                                        ? opt.first_probe_seed
                                        : Rng::mix(seed, 0xA200 + probe_counter);
        probe_counter++;
        Tensor ftr = eval::extract_features(tr.nets().theta, data, train_idx);
        Tensor fva = eval::extract_features(tr.nets().theta, data, val_idx);
        const eval::Probe p = eval::train_probe(ftr, ytr, fva, yva, data.class_count, opt.probe, pseed);
        res.probe_curve.emplace_back(cbp_offset + tr.ledger().counted(), p.val_accuracy);
        return p.val_accuracy;
    };

    if (opt.probe_at_start) probe_now();

    const std::uint64_t granule = 2 * static_cast<std::uint64_t>(opt.b);
    const std::size_t batches_per_epoch = train_idx.size() / opt.b;
    const std::size_t epochs_needed =
        opt.target_cbp == 0
            ? 0
            : static_cast<std::size_t>((opt.target_cbp + granule * batches_per_epoch - 1) /
                                       (granule * batches_per_epoch)) + 1;

    std::vector<std::uint64_t> probe_marks;
    for (std::size_t k = 1; k <= opt.probe_points; ++k)
        probe_marks.push_back(opt.target_cbp * k / (opt.probe_points + 1));

    if (epochs_needed > 0) {
        stream::IidSchedule sched(data, train_idx, opt.b, epochs_needed, Rng::mix(seed, 0x11D2));
        std::size_t next_mark = 0;
        while (tr.ledger().counted() + granule <= opt.target_cbp) {
            auto batch = sched.next();
            if (!batch) break;
            auto traces = tr.process(*batch, sched.epoch());
            res.traces.insert(res.traces.end(), traces.begin(), traces.end());
            while (next_mark < probe_marks.size() && tr.ledger().counted() >= probe_marks[next_mark]) {
                res.traces.back().probe_acc = probe_now();
                next_mark++;
            }
        }
    }

    res.final_acc = probe_now();
    if (!res.traces.empty() && res.traces.back().probe_acc < 0.0)
        res.traces.back().probe_acc = res.final_acc;
    res.cbp_counted = tr.ledger().counted();

    if (!opt.csv_path.empty())
        write_run_csv(opt.csv_path, opt.run_id.empty() ? "iid" : opt.run_id, seed, cfg.name(),
                      ssl::objective_name(cfg.objective), res.traces);
    return res;
}

// ---- CSV ------------------------------------------------------------------------

std::string csv_double(double v) {
    if (v == 0.0) v = 0.0;  // fold -0 into canonical 0
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_run_csv(const std::string& path, const std::string& run_id, std::uint64_t seed,
                   const std::string& strategy, const std::string& objective,
                   const std::vector<StepTrace>& traces) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IntegrityError("cannot write CSV: " + path);
    os << "run_id,seed,strategy,ssl_objective,experience_idx,step,cbp_so_far,"
          "loss_total,loss_ssl,loss_reg,probe_acc_after_experience,wall_ms\n";
    for (const StepTrace& t : traces) {
        os << run_id << ',' << seed << ',' << strategy << ',' << objective << ',' << t.experience
           << ',' << t.step << ',' << t.cbp_so_far << ',' << csv_double(t.loss_total) << ','
           << csv_double(t.loss_ssl) << ',' << csv_double(t.loss_reg) << ',';
        if (t.probe_acc >= 0.0) os << csv_double(t.probe_acc);
        os << ',' << csv_double(t.wall_ms) << '\n';
    }
    if (!os) throw IntegrityError("CSV write failed: " + path);
}

}  // namespace cla::strat

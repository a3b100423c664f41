#include "cla/networks.hpp"

#include <cmath>

namespace cla::nets {

void MlpSpec::validate() const {
    if (layer_widths.size() < 2) throw DimensionError("MlpSpec: need at least one layer");
    for (std::size_t w : layer_widths)
        if (w == 0) throw DimensionError("MlpSpec: widths must be positive");
    const std::size_t hidden = layer_count() - 1;
    if (!hidden_batch_norm.empty() && hidden_batch_norm.size() != hidden)
        throw DimensionError("MlpSpec: one batch-norm flag per hidden layer expected");
}

Mlp::Mlp(MlpSpec s, Rng& rng) : spec(std::move(s)) {
    spec.validate();
    const std::size_t L = spec.layer_count();
    layers.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
        Layer& ly = layers[l];
        ly.w = Tensor::zeros({in, out});
        const double limit = std::sqrt(6.0 / static_cast<double>(in));
        for (double& v : ly.w.data) v = rng.uniform(-limit, limit);
        ly.w.requires_grad = true;
        ly.b = Tensor::zeros({out});
        ly.b.requires_grad = true;
        const bool hidden = l + 1 < L;
        ly.has_bn = hidden && !spec.hidden_batch_norm.empty() && spec.hidden_batch_norm[l];
        if (ly.has_bn) {
            ly.gamma = Tensor::zeros({out});
            for (double& v : ly.gamma.data) v = 1.0;
            ly.gamma.requires_grad = true;
            ly.beta = Tensor::zeros({out});
            ly.beta.requires_grad = true;
            ly.run_mean.assign(out, 0.0);
            ly.run_var.assign(out, 1.0);
        }
    }
}

Mlp Mlp::identity(std::size_t width) {
    Mlp m;
    m.spec = MlpSpec::linear(width, width);
    m.layers.resize(1);
    Layer& ly = m.layers[0];
    ly.w = Tensor::zeros({width, width});
    for (std::size_t i = 0; i < width; ++i) ly.w.at(i, i) = 1.0;
    ly.w.requires_grad = true;
    ly.b = Tensor::zeros({width});
    ly.b.requires_grad = true;
    return m;
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x, bool training, bool frozen) {
    if (g.value(x).cols() != input_width())
        throw DimensionError("Mlp::forward: input width " + g.value(x).shape_str() + " does not match " +
                             std::to_string(input_width()));
    auto mount = [&](Tensor& t) { return frozen ? g.constant(t) : g.leaf(t); };
    ad::Var h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Layer& ly = layers[l];
        h = ad::add_rowvec(ad::matmul(h, mount(ly.w)), mount(ly.b));
        const bool hidden = l + 1 < layers.size();
        if (ly.has_bn)
            h = ad::batch_norm(h, mount(ly.gamma), mount(ly.beta), training && !frozen, ly.run_mean, ly.run_var);
        if (hidden || spec.final_relu) h = ad::relu(h);
    }
    return h;
}

Tensor Mlp::infer(const Tensor& x) const {
    if (x.cols() != input_width()) throw DimensionError("Mlp::infer: input width mismatch");
    const std::size_t r = x.rows();
    Tensor h = x;
    h.shape = {r, x.cols()};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& ly = layers[l];
        const std::size_t in = ly.w.rows(), out = ly.w.cols();
        Tensor y = Tensor::zeros({r, out});
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t p = 0; p < in; ++p) {
                const double hv = h.data[i * in + p];
                const double* wrow = &ly.w.data[p * out];
                double* yrow = &y.data[i * out];
                for (std::size_t j = 0; j < out; ++j) yrow[j] += hv * wrow[j];
            }
            for (std::size_t j = 0; j < out; ++j) y.data[i * out + j] += ly.b.data[j];
        }
        if (ly.has_bn) {
            for (std::size_t j = 0; j < out; ++j) {
                const double inv = 1.0 / std::sqrt(ly.run_var[j] + 1e-5);
                for (std::size_t i = 0; i < r; ++i) {
                    double& v = y.data[i * out + j];
                    v = ly.gamma.data[j] * (v - ly.run_mean[j]) * inv + ly.beta.data[j];
                }
            }
        }
        const bool hidden = l + 1 < layers.size();
        if (hidden || spec.final_relu)
            for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        h = std::move(y);
    }
    return h;
}

std::vector<Tensor*> Mlp::params() {
    std::vector<Tensor*> out;
    for (Layer& ly : layers) {
        out.push_back(&ly.w);
        out.push_back(&ly.b);
        if (ly.has_bn) {
            out.push_back(&ly.gamma);
            out.push_back(&ly.beta);
        }
    }
    return out;
}

std::vector<const Tensor*> Mlp::params() const {
    std::vector<const Tensor*> out;
    for (const Layer& ly : layers) {
        out.push_back(&ly.w);
        out.push_back(&ly.b);
        if (ly.has_bn) {
            out.push_back(&ly.gamma);
            out.push_back(&ly.beta);
        }
    }
    return out;
}

std::vector<std::vector<double>*> Mlp::state_buffers() {
    std::vector<std::vector<double>*> out;
    for (Layer& ly : layers)
        if (ly.has_bn) {
            out.push_back(&ly.run_mean);
            out.push_back(&ly.run_var);
        }
    return out;
}

std::vector<const std::vector<double>*> Mlp::state_buffers() const {
    std::vector<const std::vector<double>*> out;
    for (const Layer& ly : layers)
        if (ly.has_bn) {
            out.push_back(&ly.run_mean);
            out.push_back(&ly.run_var);
        }
    return out;
}

namespace {

void save_tensor(binio::Writer& w, const Tensor& t) {
    w.u64(t.shape.size());
    for (std::size_t d : t.shape) w.u64(d);
    w.u8(t.requires_grad ? 1 : 0);
    w.f64_vec(t.data);
}

Tensor load_tensor(binio::Reader& r) {
    Tensor t;
    const std::uint64_t rank = r.u64();
    for (std::uint64_t i = 0; i < rank; ++i) t.shape.push_back(r.u64());
    t.requires_grad = r.u8() != 0;
    t.data = r.f64_vec();
    if (t.data.size() != t.count()) throw IntegrityError("tensor payload does not match its shape table");
    return t;
}

void save_spec(binio::Writer& w, const MlpSpec& s) {
    w.u64(s.layer_widths.size());
    for (std::size_t v : s.layer_widths) w.u64(v);
    w.u64(s.hidden_batch_norm.size());
    for (bool b : s.hidden_batch_norm) w.u8(b ? 1 : 0);
    w.u8(s.final_relu ? 1 : 0);
}

MlpSpec load_spec(binio::Reader& r) {
    MlpSpec s;
    const std::uint64_t nw = r.u64();
    for (std::uint64_t i = 0; i < nw; ++i) s.layer_widths.push_back(r.u64());
    const std::uint64_t nb = r.u64();
    for (std::uint64_t i = 0; i < nb; ++i) s.hidden_batch_norm.push_back(r.u8() != 0);
    s.final_relu = r.u8() != 0;
    s.validate();
    return s;
}

}  // namespace

void Mlp::save(binio::Writer& w) const {
    save_spec(w, spec);
    w.u64(layers.size());
    for (const Layer& ly : layers) {
        save_tensor(w, ly.w);
        save_tensor(w, ly.b);
        w.u8(ly.has_bn ? 1 : 0);
        if (ly.has_bn) {
            save_tensor(w, ly.gamma);
            save_tensor(w, ly.beta);
            w.f64_vec(ly.run_mean);
            w.f64_vec(ly.run_var);
        }
    }
}

Mlp Mlp::load(binio::Reader& r) {
    Mlp m;
    m.spec = load_spec(r);
    const std::uint64_t n = r.u64();
    m.layers.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Layer& ly = m.layers[i];
        ly.w = load_tensor(r);
        ly.b = load_tensor(r);
        ly.has_bn = r.u8() != 0;
        if (ly.has_bn) {
            ly.gamma = load_tensor(r);
            ly.beta = load_tensor(r);
            ly.run_mean = r.f64_vec();
            ly.run_var = r.f64_vec();
        }
    }
    return m;
}

std::vector<Tensor*> LearnerNet::params() {
    std::vector<Tensor*> out = encoder.params();
    for (Tensor* t : projector.params()) out.push_back(t);
    return out;
}

std::vector<const Tensor*> LearnerNet::params() const {
    std::vector<const Tensor*> out = encoder.params();
    for (const Tensor* t : projector.params()) out.push_back(t);
    return out;
}

std::vector<std::vector<double>*> LearnerNet::state_buffers() {
    std::vector<std::vector<double>*> out = encoder.state_buffers();
    for (auto* s : projector.state_buffers()) out.push_back(s);
    return out;
}

void LearnerNet::save(binio::Writer& w) const {
    encoder.save(w);
    projector.save(w);
}

LearnerNet LearnerNet::load(binio::Reader& r) {
    LearnerNet n;
    n.encoder = Mlp::load(r);
    n.projector = Mlp::load(r);
    return n;
}

NetworkArch NetworkArch::desk_default(std::size_t input_dim) {
    NetworkArch a;
    a.encoder = MlpSpec{{input_dim, 128, 128}, {true}, false};
    a.projector = MlpSpec{{128, 64}, {}, false};
    a.predictor = MlpSpec{{64, 32, 64}, {true}, false};
    a.align_proj = MlpSpec{{64, 64, 64}, {false}, false};
    return a;
}

void NetworkArch::validate() const {
    encoder.validate();
    projector.validate();
    predictor.validate();
    align_proj.validate();
    if (projector.layer_widths.front() != encoder.layer_widths.back())
        throw DimensionError("NetworkArch: projector input must match encoder output");
    const std::size_t f = projector.layer_widths.back();
    if (predictor.layer_widths.front() != f || predictor.layer_widths.back() != f)
        throw DimensionError("NetworkArch: predictor must map Z -> Z");
    if (align_proj.layer_widths.front() != f || align_proj.layer_widths.back() != f)
        throw DimensionError("NetworkArch: a_phi must map Z -> Z");
}

void NetworkArch::save(binio::Writer& w) const {
    save_spec(w, encoder);
    save_spec(w, projector);
    save_spec(w, predictor);
    save_spec(w, align_proj);
}

NetworkArch NetworkArch::load(binio::Reader& r) {
    NetworkArch a;
    a.encoder = load_spec(r);
    a.projector = load_spec(r);
    a.predictor = load_spec(r);
    a.align_proj = load_spec(r);
    return a;
}

NetworkSet NetworkSet::make(const NetworkArch& arch, Rng& rng) {
    arch.validate();
    NetworkSet s;
    s.theta.encoder = Mlp(arch.encoder, rng);
    s.theta.projector = Mlp(arch.projector, rng);
    s.predictor = Mlp(arch.predictor, rng);
    s.align_proj = Mlp(arch.align_proj, rng);
    return s;
}

void NetworkSet::save(binio::Writer& w) const {
    theta.save(w);
    predictor.save(w);
    align_proj.save(w);
    w.u8(ema_theta.has_value() ? 1 : 0);
    if (ema_theta) ema_theta->save(w);
    w.u8(frozen_theta.has_value() ? 1 : 0);
    if (frozen_theta) frozen_theta->save(w);
}

NetworkSet NetworkSet::load(binio::Reader& r) {
    NetworkSet s;
    s.theta = LearnerNet::load(r);
    s.predictor = Mlp::load(r);
    s.align_proj = Mlp::load(r);
    if (r.u8() != 0) s.ema_theta = LearnerNet::load(r);
    if (r.u8() != 0) s.frozen_theta = LearnerNet::load(r);
    return s;
}

void ema_update(const LearnerNet& theta, LearnerNet& ema, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw DimensionError("ema_update: tau must lie in [0, 1]");
    if (tau == 1.0) return;
    auto src = theta.params();
    auto dst = ema.params();
    if (src.size() != dst.size()) throw DimensionError("ema_update: parameter lists differ");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!src[i]->same_shape(*dst[i])) throw DimensionError("ema_update: parameter shapes differ");
        if (tau == 0.0) {
            dst[i]->data = src[i]->data;
            continue;
        }
        for (std::size_t k = 0; k < src[i]->data.size(); ++k) {
            const double p = src[i]->data[k];
            dst[i]->data[k] = p + tau * (dst[i]->data[k] - p);
        }
    }
    auto ssrc = const_cast<LearnerNet&>(theta).state_buffers();
    auto sdst = ema.state_buffers();
    for (std::size_t i = 0; i < ssrc.size(); ++i) {
        if (tau == 0.0) {
            *sdst[i] = *ssrc[i];
            continue;
        }
        for (std::size_t k = 0; k < ssrc[i]->size(); ++k) {
            const double p = (*ssrc[i])[k];
            (*sdst[i])[k] = p + tau * ((*sdst[i])[k] - p);
        }
    }
}

LearnerNet snapshot_frozen(const LearnerNet& theta) {
    LearnerNet copy = theta;
    for (Tensor* t : copy.params()) {
        t->requires_grad = false;
        t->grad.clear();
    }
    return copy;
}

SgdState::SgdState(double lr, double mom, double wd)
    : learning_rate(lr), momentum(mom), weight_decay(wd) {
    if (!(lr > 0.0)) throw DimensionError("SgdState: learning rate must be positive");
    if (!(mom >= 0.0 && mom < 1.0)) throw DimensionError("SgdState: momentum must lie in [0, 1)");
    if (!(wd >= 0.0)) throw DimensionError("SgdState: weight decay must be non-negative");
}

void SgdState::save(binio::Writer& w) const {
    w.f64(learning_rate);
    w.f64(momentum);
    w.f64(weight_decay);
    w.u64(velocity.size());
    for (const auto& v : velocity) w.f64_vec(v);
}

SgdState SgdState::load(binio::Reader& r) {
    SgdState s;
    s.learning_rate = r.f64();
    s.momentum = r.f64();
    s.weight_decay = r.f64();
    const std::uint64_t n = r.u64();
    s.velocity.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) s.velocity[i] = r.f64_vec();
    return s;
}

void sgd_step(const std::vector<Tensor*>& params, SgdState& st) {
    if (st.velocity.empty()) {
        st.velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) st.velocity[i].assign(params[i]->data.size(), 0.0);
    }
    if (st.velocity.size() != params.size()) throw DimensionError("sgd_step: velocity/param list mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (p.grad.size() != p.data.size())
            throw DimensionError("sgd_step: missing gradient on a trainable parameter");
        std::vector<double>& v = st.velocity[i];
        if (v.size() != p.data.size()) throw DimensionError("sgd_step: velocity shape mismatch");
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            v[k] = st.momentum * v[k] + p.grad[k] + st.weight_decay * p.data[k];
            p.data[k] -= st.learning_rate * v[k];
        }
        p.grad.clear();
    }
}

namespace {
constexpr char kCkptMagic[8] = {'C', 'L', 'A', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const NetworkSet& nets, const SgdState& opt, const std::string& path) {
    binio::Writer w;
    nets.save(w);
    opt.save(w);
    binio::write_file(path, kCkptMagic, 1, w);
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto payload = binio::read_file(path, kCkptMagic, 1);
    binio::Reader r(payload);
    Checkpoint c;
    c.nets = NetworkSet::load(r);
    c.opt = SgdState::load(r);
    return c;
}

}  // namespace cla::nets

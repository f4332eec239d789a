#include <cmath>

#include "ckd/model.hpp"

// Recurrent family: tanh Elman encoder, decoder with dot-product attention
// over the encoder states. The decoder state at position p is a function of
// the previous state, the previous gold token and an attention read, so the
// family has no position table and no hard length cap beyond the decode
// loop's own limit. Deliberately a different lineage from the attention
// family for heterogeneous teacher/student setups.

namespace ckd {

namespace {

void matvec(const double* W, const double* x, double* y, int M, int N) {
  for (int m = 0; m < M; ++m) {
    const double* row = W + static_cast<std::size_t>(m) * N;
    double s = 0;
    for (int n = 0; n < N; ++n) s += row[n] * x[n];
    y[m] += s;
  }
}

void matvec_t(const double* W, const double* dy, double* dx, int M, int N) {
  for (int m = 0; m < M; ++m) {
    const double* row = W + static_cast<std::size_t>(m) * N;
    const double d = dy[m];
    for (int n = 0; n < N; ++n) dx[n] += row[n] * d;
  }
}

void outer_acc(double* dW, const double* dy, const double* x, int M, int N) {
  for (int m = 0; m < M; ++m) {
    double* row = dW + static_cast<std::size_t>(m) * N;
    const double d = dy[m];
    for (int n = 0; n < N; ++n) row[n] += d * x[n];
  }
}

struct RCache : NetCache {
  int I = 0, J = 0;
  std::vector<double> h;     // I*H encoder states
  std::vector<double> km;    // I*H attention keys
  std::vector<double> sinit; // H
  std::vector<double> s;     // J*H decoder states (tanh outputs)
  std::vector<double> attw;  // J*I
  std::vector<double> a;     // J*H contexts, pre-dropout
};

class RnnNet : public Net {
 public:
  explicit RnnNet(const ArchSpec& arch)
      : V(arch.vocab_size), D(arch.embed_dim), H(arch.hidden_dim) {
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
      std::size_t o = off;
      off += n;
      return o;
    };
    const auto VD = static_cast<std::size_t>(V) * D;
    const auto HD = static_cast<std::size_t>(H) * D;
    const auto HH = static_cast<std::size_t>(H) * H;
    e_src = take(VD);
    w_xh = take(HD);
    w_hh = take(HH);
    b_h = take(H);
    e_tgt = take(VD);
    w_init = take(HH);
    w_att = take(HH);
    w_us = take(HD);
    w_ss = take(HH);
    w_as = take(HH);
    b_s = take(H);
    w_out = take(static_cast<std::size_t>(V) * H);
    b_out = take(V);
    n_params = off;
  }

  std::size_t param_count() const override { return n_params; }

  void init_params(std::span<double> p, std::mt19937_64& rng) const override {
    std::normal_distribution<double> nd(0.0, 0.08);
    for (double& x : p) x = nd(rng);
    for (int i = 0; i < H; ++i) p[b_h + static_cast<std::size_t>(i)] = 0.0;
    for (int i = 0; i < H; ++i) p[b_s + static_cast<std::size_t>(i)] = 0.0;
    for (int i = 0; i < V; ++i) p[b_out + static_cast<std::size_t>(i)] = 0.0;
  }

  void forward(std::span<const double> P, const SentencePair& pair,
               const EvalOptions& opt, double temperature, std::vector<Row>& probs,
               std::unique_ptr<NetCache>* cache) const override {
    const int I = static_cast<int>(pair.source.size());
    const int J = static_cast<int>(pair.target.size());
    if (I < 1 || J < 1) throw DataError("empty sentence side");
    check_ids(pair);
    const double* p = P.data();
    const double isq = 1.0 / std::sqrt(static_cast<double>(H));

    RCache local;
    RCache& c = cache ? *(new_cache(cache)) : local;
    c.I = I;
    c.J = J;
    c.h.assign(static_cast<std::size_t>(I) * H, 0.0);
    c.km.assign(static_cast<std::size_t>(I) * H, 0.0);
    for (int i = 0; i < I; ++i) {
      double* hi = &c.h[static_cast<std::size_t>(i) * H];
      for (int k = 0; k < H; ++k) hi[k] = p[b_h + k];
      matvec(p + w_xh, p + e_src + static_cast<std::size_t>(pair.source[i]) * D, hi, H,
             D);
      if (i > 0) matvec(p + w_hh, &c.h[static_cast<std::size_t>(i - 1) * H], hi, H, H);
      for (int k = 0; k < H; ++k) hi[k] = std::tanh(hi[k]);
      matvec(p + w_att, hi, &c.km[static_cast<std::size_t>(i) * H], H, H);
    }
    c.sinit.assign(static_cast<std::size_t>(H), 0.0);
    matvec(p + w_init, &c.h[static_cast<std::size_t>(I - 1) * H], c.sinit.data(), H, H);
    for (int k = 0; k < H; ++k) c.sinit[k] = std::tanh(c.sinit[k]);

    c.s.assign(static_cast<std::size_t>(J) * H, 0.0);
    c.attw.assign(static_cast<std::size_t>(J) * I, 0.0);
    c.a.assign(static_cast<std::size_t>(J) * H, 0.0);
    probs.assign(static_cast<std::size_t>(J), Row(static_cast<std::size_t>(V), 0.0));
    const double* sprev = c.sinit.data();
    for (int j = 0; j < J; ++j) {
      double* wj = &c.attw[static_cast<std::size_t>(j) * I];
      for (int i = 0; i < I; ++i) {
        const double* kmi = &c.km[static_cast<std::size_t>(i) * H];
        double s = 0;
        for (int k = 0; k < H; ++k) s += sprev[k] * kmi[k];
        wj[i] = s * isq;
      }
      softmax_inplace(std::span<double>(wj, static_cast<std::size_t>(I)));
      double* aj = &c.a[static_cast<std::size_t>(j) * H];
      for (int i = 0; i < I; ++i) {
        const double* hi = &c.h[static_cast<std::size_t>(i) * H];
        for (int k = 0; k < H; ++k) aj[k] += wj[i] * hi[k];
      }
      int in = j == 0 ? Vocab::kBos : pair.target[static_cast<std::size_t>(j) - 1];
      double* sj = &c.s[static_cast<std::size_t>(j) * H];
      for (int k = 0; k < H; ++k) sj[k] = p[b_s + k];
      matvec(p + w_us, p + e_tgt + static_cast<std::size_t>(in) * D, sj, H, D);
      matvec(p + w_ss, sprev, sj, H, H);
      std::vector<double> ad(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k)
        ad[k] = aj[k] * dropout_mask(opt.dropout_seed, opt.sent_key, 0, j, k, opt.dropout);
      matvec(p + w_as, ad.data(), sj, H, H);
      for (int k = 0; k < H; ++k) sj[k] = std::tanh(sj[k]);

      Row& row = probs[static_cast<std::size_t>(j)];
      for (int t = 0; t < V; ++t) row[static_cast<std::size_t>(t)] = p[b_out + t];
      std::vector<double> sd(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k)
        sd[k] = sj[k] * dropout_mask(opt.dropout_seed, opt.sent_key, 1, j, k, opt.dropout);
      matvec(p + w_out, sd.data(), row.data(), V, H);
      softmax_inplace(row, temperature);
      sprev = sj;
    }
  }

  void backward(std::span<const double> P, const SentencePair& pair,
                const EvalOptions& opt, const NetCache& cache,
                const std::vector<Row>& dlogits, std::span<double> grad) const override {
    const auto& c = static_cast<const RCache&>(cache);
    const int I = c.I, J = c.J;
    if (dlogits.size() != static_cast<std::size_t>(J))
      throw ModelError("dlogits row count mismatch");
    const double* p = P.data();
    double* g = grad.data();
    const double isq = 1.0 / std::sqrt(static_cast<double>(H));

    std::vector<double> dh(static_cast<std::size_t>(I) * H, 0.0);
    std::vector<double> dkm(static_cast<std::size_t>(I) * H, 0.0);
    std::vector<double> dscarry(static_cast<std::size_t>(H), 0.0);  // into s_{p}
    std::vector<double> dsinit(static_cast<std::size_t>(H), 0.0);

    for (int j = J - 1; j >= 0; --j) {
      const double* sj = &c.s[static_cast<std::size_t>(j) * H];
      const double* sprev =
          j == 0 ? c.sinit.data() : &c.s[static_cast<std::size_t>(j - 1) * H];
      const double* dz = dlogits[static_cast<std::size_t>(j)].data();

      std::vector<double> sd(static_cast<std::size_t>(H));
      std::vector<double> mask1(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k) {
        mask1[k] = dropout_mask(opt.dropout_seed, opt.sent_key, 1, j, k, opt.dropout);
        sd[k] = sj[k] * mask1[k];
      }
      std::vector<double> dsd(static_cast<std::size_t>(H), 0.0);
      matvec_t(p + w_out, dz, dsd.data(), V, H);
      outer_acc(g + w_out, dz, sd.data(), V, H);
      for (int t = 0; t < V; ++t) g[b_out + t] += dz[t];

      std::vector<double> ds(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k) ds[k] = dscarry[k] + dsd[k] * mask1[k];
      std::vector<double> dspre(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k) dspre[k] = ds[k] * (1.0 - sj[k] * sj[k]);

      int in = j == 0 ? Vocab::kBos : pair.target[static_cast<std::size_t>(j) - 1];
      outer_acc(g + w_us, dspre.data(),
                p + e_tgt + static_cast<std::size_t>(in) * D, H, D);
      matvec_t(p + w_us, dspre.data(),
               g + e_tgt + static_cast<std::size_t>(in) * D, H, D);
      outer_acc(g + w_ss, dspre.data(), sprev, H, H);
      std::vector<double> dsprev(static_cast<std::size_t>(H), 0.0);
      matvec_t(p + w_ss, dspre.data(), dsprev.data(), H, H);

      const double* aj = &c.a[static_cast<std::size_t>(j) * H];
      std::vector<double> mask0(static_cast<std::size_t>(H));
      std::vector<double> ad(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k) {
        mask0[k] = dropout_mask(opt.dropout_seed, opt.sent_key, 0, j, k, opt.dropout);
        ad[k] = aj[k] * mask0[k];
      }
      outer_acc(g + w_as, dspre.data(), ad.data(), H, H);
      std::vector<double> dad(static_cast<std::size_t>(H), 0.0);
      matvec_t(p + w_as, dspre.data(), dad.data(), H, H);
      for (int k = 0; k < H; ++k) g[b_s + k] += dspre[k];

      std::vector<double> da(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k) da[k] = dad[k] * mask0[k];

      // attention backward
      const double* wj = &c.attw[static_cast<std::size_t>(j) * I];
      std::vector<double> dw(static_cast<std::size_t>(I), 0.0);
      for (int i = 0; i < I; ++i) {
        const double* hi = &c.h[static_cast<std::size_t>(i) * H];
        double s = 0;
        for (int k = 0; k < H; ++k) s += da[k] * hi[k];
        dw[i] = s;
        for (int k = 0; k < H; ++k)
          dh[static_cast<std::size_t>(i) * H + k] += wj[i] * da[k];
      }
      double dot = 0;
      for (int i = 0; i < I; ++i) dot += wj[i] * dw[i];
      for (int i = 0; i < I; ++i) {
        double dsc = wj[i] * (dw[i] - dot) * isq;
        const double* kmi = &c.km[static_cast<std::size_t>(i) * H];
        for (int k = 0; k < H; ++k) {
          dsprev[k] += dsc * kmi[k];
          dkm[static_cast<std::size_t>(i) * H + k] += dsc * sprev[k];
        }
      }

      if (j == 0) {
        for (int k = 0; k < H; ++k) dsinit[k] += dsprev[k];
      } else {
        dscarry = std::move(dsprev);
      }
    }

    // initial state
    {
      std::vector<double> dspre(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k)
        dspre[k] = dsinit[k] * (1.0 - c.sinit[k] * c.sinit[k]);
      outer_acc(g + w_init, dspre.data(), &c.h[static_cast<std::size_t>(I - 1) * H], H,
                H);
      matvec_t(p + w_init, dspre.data(), &dh[static_cast<std::size_t>(I - 1) * H], H,
               H);
    }
    // attention keys
    for (int i = 0; i < I; ++i) {
      outer_acc(g + w_att, &dkm[static_cast<std::size_t>(i) * H],
                &c.h[static_cast<std::size_t>(i) * H], H, H);
      matvec_t(p + w_att, &dkm[static_cast<std::size_t>(i) * H],
               &dh[static_cast<std::size_t>(i) * H], H, H);
    }
    // encoder BPTT
    for (int i = I - 1; i >= 0; --i) {
      const double* hi = &c.h[static_cast<std::size_t>(i) * H];
      std::vector<double> dhin(static_cast<std::size_t>(H));
      for (int k = 0; k < H; ++k)
        dhin[k] = dh[static_cast<std::size_t>(i) * H + k] * (1.0 - hi[k] * hi[k]);
      outer_acc(g + w_xh, dhin.data(),
                p + e_src + static_cast<std::size_t>(pair.source[i]) * D, H, D);
      matvec_t(p + w_xh, dhin.data(),
               g + e_src + static_cast<std::size_t>(pair.source[i]) * D, H, D);
      for (int k = 0; k < H; ++k) g[b_h + k] += dhin[k];
      if (i > 0) {
        outer_acc(g + w_hh, dhin.data(), &c.h[static_cast<std::size_t>(i - 1) * H], H,
                  H);
        matvec_t(p + w_hh, dhin.data(), &dh[static_cast<std::size_t>(i - 1) * H], H, H);
      }
    }
  }

 private:
  void check_ids(const SentencePair& pair) const {
    for (int t : pair.source)
      if (t < 0 || t >= V) throw DataError("source token id out of range");
    for (int t : pair.target)
      if (t < 0 || t >= V) throw DataError("target token id out of range");
  }

  RCache* new_cache(std::unique_ptr<NetCache>* cache) const {
    auto owned = std::make_unique<RCache>();
    RCache* raw = owned.get();
    *cache = std::move(owned);
    return raw;
  }

  int V, D, H;
  std::size_t e_src, w_xh, w_hh, b_h;
  std::size_t e_tgt, w_init, w_att, w_us, w_ss, w_as, b_s;
  std::size_t w_out, b_out;
  std::size_t n_params = 0;
};

}  // namespace

std::shared_ptr<const Net> make_recurrent_net(const ArchSpec& a) {
  return std::make_shared<RnnNet>(a);
}

}  // namespace ckd

#include <cmath>

#include "ckd/model.hpp"

// Attention family: a small encoder-decoder with pre-norm residual blocks.
// Encoder: embedding + position table, one tanh FFN block, RMS-normed
// memory. Decoder: per block, single-head causal self-attention,
// cross-attention over the memory, tanh FFN; final RMS norm and an output
// projection. Everything is written against a flat parameter vector so the
// whole model can be checkpointed, finite-differenced and Adam-stepped
// uniformly.

namespace ckd {

namespace {

constexpr double kRmsEps = 1e-8;

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

double rms_forward(const double* x, const double* g, double* y, int D) {
  double ss = 0;
  for (int d = 0; d < D; ++d) ss += x[d] * x[d];
  double r = std::sqrt(ss / D + kRmsEps);
  for (int d = 0; d < D; ++d) y[d] = g[d] * x[d] / r;
  return r;
}

void rms_backward(const double* x, const double* g, double r, const double* dy,
                  double* dx, double* dg, int D) {
  double s = 0;
  for (int d = 0; d < D; ++d) {
    dg[d] += dy[d] * x[d] / r;
    s += dy[d] * g[d] * x[d];
  }
  const double c = s / (D * r * r * r);
  for (int d = 0; d < D; ++d) dx[d] += dy[d] * g[d] / r - x[d] * c;
}

struct ACache : NetCache {
  int I = 0, J = 0;
  std::vector<double> e, rA, nA, h, mhat, rB, m;
  struct Block {
    std::vector<double> xin, r1, n1, q, k, v, attw, ctx;
    std::vector<double> xa, r2, n2, ck, cv, cattw, cctx;
    std::vector<double> xc, r3, n3, fh, xf;
  };
  std::vector<Block> blocks;
  std::vector<double> rF, nF;
};

class AttnNet : public Net {
 public:
  explicit AttnNet(const ArchSpec& a)
      : V(a.vocab_size), D(a.embed_dim), F(a.hidden_dim), NL(a.layers),
        Lmax(a.max_len) {
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
      std::size_t o = off;
      off += n;
      return o;
    };
    const auto VD = static_cast<std::size_t>(V) * D;
    const auto LD = static_cast<std::size_t>(Lmax) * D;
    const auto FD = static_cast<std::size_t>(F) * D;
    const auto DD = static_cast<std::size_t>(D) * D;
    e_src = take(VD);
    e_tgt = take(VD);
    p_src = take(LD);
    p_tgt = take(LD);
    gA = take(D);
    we1 = take(FD);
    be1 = take(F);
    we2 = take(FD);
    be2 = take(D);
    gB = take(D);
    blocks.resize(static_cast<std::size_t>(NL));
    for (auto& b : blocks) {
      b.g1 = take(D);
      b.wq = take(DD);
      b.wk = take(DD);
      b.wv = take(DD);
      b.wo = take(DD);
      b.g2 = take(D);
      b.wcq = take(DD);
      b.wck = take(DD);
      b.wcv = take(DD);
      b.wco = take(DD);
      b.g3 = take(D);
      b.wf1 = take(FD);
      b.bf1 = take(F);
      b.wf2 = take(FD);
      b.bf2 = take(D);
    }
    gF = take(D);
    w_out = take(VD);
    b_out = take(V);
    n_params = off;
  }

  std::size_t param_count() const override { return n_params; }

  void init_params(std::span<double> p, std::mt19937_64& rng) const override {
    std::normal_distribution<double> nd(0.0, 0.08);
    for (double& x : p) x = nd(rng);
    auto ones = [&p](std::size_t o, int n) {
      for (int i = 0; i < n; ++i) p[o + static_cast<std::size_t>(i)] = 1.0;
    };
    auto zeros = [&p](std::size_t o, int n) {
      for (int i = 0; i < n; ++i) p[o + static_cast<std::size_t>(i)] = 0.0;
    };
    ones(gA, D);
    zeros(be1, F);
    zeros(be2, D);
    ones(gB, D);
    for (const auto& b : blocks) {
      ones(b.g1, D);
      ones(b.g2, D);
      ones(b.g3, D);
      zeros(b.bf1, F);
      zeros(b.bf2, D);
    }
    ones(gF, D);
    zeros(b_out, V);
  }

  void forward(std::span<const double> P, const SentencePair& pair,
               const EvalOptions& opt, double temperature, std::vector<Row>& probs,
               std::unique_ptr<NetCache>* cache) const override {
    const int I = static_cast<int>(pair.source.size());
    const int J = static_cast<int>(pair.target.size());
    if (I < 1 || J < 1) throw DataError("empty sentence side");
    if (I > Lmax || J > Lmax)
      throw ModelError("sentence exceeds the architecture's max_len");
    check_ids(pair);

    ACache local;
    ACache& c = cache ? *(new_cache(cache)) : local;
    c.I = I;
    c.J = J;
    const double* p = P.data();
    const double isq = 1.0 / std::sqrt(static_cast<double>(D));

    // -- encoder --
    c.e.assign(static_cast<std::size_t>(I) * D, 0.0);
    c.rA.assign(static_cast<std::size_t>(I), 0.0);
    c.nA.assign(static_cast<std::size_t>(I) * D, 0.0);
    c.h.assign(static_cast<std::size_t>(I) * F, 0.0);
    c.mhat.assign(static_cast<std::size_t>(I) * D, 0.0);
    c.rB.assign(static_cast<std::size_t>(I), 0.0);
    c.m.assign(static_cast<std::size_t>(I) * D, 0.0);
    for (int i = 0; i < I; ++i) {
      double* ei = &c.e[static_cast<std::size_t>(i) * D];
      const double* emb = p + e_src + static_cast<std::size_t>(pair.source[i]) * D;
      const double* pos = p + p_src + static_cast<std::size_t>(i) * D;
      for (int d = 0; d < D; ++d) ei[d] = emb[d] + pos[d];
      double* ni = &c.nA[static_cast<std::size_t>(i) * D];
      c.rA[i] = rms_forward(ei, p + gA, ni, D);
      double* hi = &c.h[static_cast<std::size_t>(i) * F];
      for (int f = 0; f < F; ++f) hi[f] = p[be1 + f];
      matvec(p + we1, ni, hi, F, D);
      for (int f = 0; f < F; ++f) hi[f] = std::tanh(hi[f]);
      double* mi = &c.mhat[static_cast<std::size_t>(i) * D];
      for (int d = 0; d < D; ++d) mi[d] = p[be2 + d];
      std::vector<double> hd(static_cast<std::size_t>(F));
      for (int f = 0; f < F; ++f)
        hd[f] = hi[f] * dropout_mask(opt.dropout_seed, opt.sent_key, 0, i, f, opt.dropout);
      matvec(p + we2, hd.data(), mi, D, F);
      for (int d = 0; d < D; ++d) mi[d] += ei[d];
      c.rB[i] = rms_forward(mi, p + gB, &c.m[static_cast<std::size_t>(i) * D], D);
    }

    // -- decoder --
    c.blocks.resize(static_cast<std::size_t>(NL));
    std::vector<double> stream(static_cast<std::size_t>(J) * D, 0.0);
    for (int j = 0; j < J; ++j) {
      int in = j == 0 ? Vocab::kBos : pair.target[static_cast<std::size_t>(j) - 1];
      const double* emb = p + e_tgt + static_cast<std::size_t>(in) * D;
      const double* pos = p + p_tgt + static_cast<std::size_t>(j) * D;
      double* uj = &stream[static_cast<std::size_t>(j) * D];
      for (int d = 0; d < D; ++d) uj[d] = emb[d] + pos[d];
    }

    for (int l = 0; l < NL; ++l) {
      const auto& B = blocks[static_cast<std::size_t>(l)];
      auto& bc = c.blocks[static_cast<std::size_t>(l)];
      bc.xin = stream;
      const std::size_t JD = static_cast<std::size_t>(J) * D;
      bc.r1.assign(static_cast<std::size_t>(J), 0.0);
      bc.n1.assign(JD, 0.0);
      bc.q.assign(JD, 0.0);
      bc.k.assign(JD, 0.0);
      bc.v.assign(JD, 0.0);
      bc.attw.assign(static_cast<std::size_t>(J) * J, 0.0);
      bc.ctx.assign(JD, 0.0);
      for (int j = 0; j < J; ++j) {
        const double* xj = &bc.xin[static_cast<std::size_t>(j) * D];
        double* nj = &bc.n1[static_cast<std::size_t>(j) * D];
        bc.r1[j] = rms_forward(xj, p + B.g1, nj, D);
        matvec(p + B.wq, nj, &bc.q[static_cast<std::size_t>(j) * D], D, D);
        matvec(p + B.wk, nj, &bc.k[static_cast<std::size_t>(j) * D], D, D);
        matvec(p + B.wv, nj, &bc.v[static_cast<std::size_t>(j) * D], D, D);
      }
      bc.xa = bc.xin;
      for (int j = 0; j < J; ++j) {
        double* wj = &bc.attw[static_cast<std::size_t>(j) * J];
        const double* qj = &bc.q[static_cast<std::size_t>(j) * D];
        for (int i = 0; i <= j; ++i) {
          const double* ki = &bc.k[static_cast<std::size_t>(i) * D];
          double s = 0;
          for (int d = 0; d < D; ++d) s += qj[d] * ki[d];
          wj[i] = s * isq;
        }
        softmax_inplace(std::span<double>(wj, static_cast<std::size_t>(j) + 1));
        double* ctx = &bc.ctx[static_cast<std::size_t>(j) * D];
        for (int i = 0; i <= j; ++i) {
          const double* vi = &bc.v[static_cast<std::size_t>(i) * D];
          for (int d = 0; d < D; ++d) ctx[d] += wj[i] * vi[d];
        }
        std::vector<double> oj(static_cast<std::size_t>(D), 0.0);
        matvec(p + B.wo, ctx, oj.data(), D, D);
        double* xaj = &bc.xa[static_cast<std::size_t>(j) * D];
        for (int d = 0; d < D; ++d)
          xaj[d] += oj[d] * dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 1, j,
                                         d, opt.dropout);
      }

      // cross-attention
      bc.r2.assign(static_cast<std::size_t>(J), 0.0);
      bc.n2.assign(JD, 0.0);
      bc.ck.assign(static_cast<std::size_t>(I) * D, 0.0);
      bc.cv.assign(static_cast<std::size_t>(I) * D, 0.0);
      bc.cattw.assign(static_cast<std::size_t>(J) * I, 0.0);
      bc.cctx.assign(JD, 0.0);
      for (int i = 0; i < I; ++i) {
        const double* mi = &c.m[static_cast<std::size_t>(i) * D];
        matvec(p + B.wck, mi, &bc.ck[static_cast<std::size_t>(i) * D], D, D);
        matvec(p + B.wcv, mi, &bc.cv[static_cast<std::size_t>(i) * D], D, D);
      }
      bc.xc = bc.xa;
      for (int j = 0; j < J; ++j) {
        const double* xaj = &bc.xa[static_cast<std::size_t>(j) * D];
        double* nj = &bc.n2[static_cast<std::size_t>(j) * D];
        bc.r2[j] = rms_forward(xaj, p + B.g2, nj, D);
        std::vector<double> cq(static_cast<std::size_t>(D), 0.0);
        matvec(p + B.wcq, nj, cq.data(), D, D);
        double* wj = &bc.cattw[static_cast<std::size_t>(j) * I];
        for (int i = 0; i < I; ++i) {
          const double* cki = &bc.ck[static_cast<std::size_t>(i) * D];
          double s = 0;
          for (int d = 0; d < D; ++d) s += cq[d] * cki[d];
          wj[i] = s * isq;
        }
        softmax_inplace(std::span<double>(wj, static_cast<std::size_t>(I)));
        double* cctx = &bc.cctx[static_cast<std::size_t>(j) * D];
        for (int i = 0; i < I; ++i) {
          const double* cvi = &bc.cv[static_cast<std::size_t>(i) * D];
          for (int d = 0; d < D; ++d) cctx[d] += wj[i] * cvi[d];
        }
        std::vector<double> co(static_cast<std::size_t>(D), 0.0);
        matvec(p + B.wco, cctx, co.data(), D, D);
        double* xcj = &bc.xc[static_cast<std::size_t>(j) * D];
        for (int d = 0; d < D; ++d)
          xcj[d] += co[d] * dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 2, j,
                                         d, opt.dropout);
      }

      // ffn
      bc.r3.assign(static_cast<std::size_t>(J), 0.0);
      bc.n3.assign(JD, 0.0);
      bc.fh.assign(static_cast<std::size_t>(J) * F, 0.0);
      bc.xf = bc.xc;
      for (int j = 0; j < J; ++j) {
        const double* xcj = &bc.xc[static_cast<std::size_t>(j) * D];
        double* nj = &bc.n3[static_cast<std::size_t>(j) * D];
        bc.r3[j] = rms_forward(xcj, p + B.g3, nj, D);
        double* fhj = &bc.fh[static_cast<std::size_t>(j) * F];
        for (int f = 0; f < F; ++f) fhj[f] = p[B.bf1 + f];
        matvec(p + B.wf1, nj, fhj, F, D);
        for (int f = 0; f < F; ++f) fhj[f] = std::tanh(fhj[f]);
        std::vector<double> fhd(static_cast<std::size_t>(F));
        for (int f = 0; f < F; ++f)
          fhd[f] = fhj[f] * dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 3, j,
                                         f, opt.dropout);
        std::vector<double> fo(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d) fo[d] = p[B.bf2 + d];
        matvec(p + B.wf2, fhd.data(), fo.data(), D, F);
        double* xfj = &bc.xf[static_cast<std::size_t>(j) * D];
        for (int d = 0; d < D; ++d) xfj[d] += fo[d];
      }
      stream = bc.xf;
    }

    // -- output --
    c.rF.assign(static_cast<std::size_t>(J), 0.0);
    c.nF.assign(static_cast<std::size_t>(J) * D, 0.0);
    probs.assign(static_cast<std::size_t>(J), Row(static_cast<std::size_t>(V), 0.0));
    for (int j = 0; j < J; ++j) {
      c.rF[j] = rms_forward(&stream[static_cast<std::size_t>(j) * D], p + gF,
                            &c.nF[static_cast<std::size_t>(j) * D], D);
      Row& row = probs[static_cast<std::size_t>(j)];
      for (int t = 0; t < V; ++t) row[static_cast<std::size_t>(t)] = p[b_out + t];
      matvec(p + w_out, &c.nF[static_cast<std::size_t>(j) * D], row.data(), V, D);
      softmax_inplace(row, temperature);
    }
  }

  void backward(std::span<const double> P, const SentencePair& pair,
                const EvalOptions& opt, const NetCache& cache,
                const std::vector<Row>& dlogits, std::span<double> grad) const override {
    const auto& c = static_cast<const ACache&>(cache);
    const int I = c.I, J = c.J;
    if (dlogits.size() != static_cast<std::size_t>(J))
      throw ModelError("dlogits row count mismatch");
    const double* p = P.data();
    double* g = grad.data();
    const double isq = 1.0 / std::sqrt(static_cast<double>(D));

    std::vector<double> dstream(static_cast<std::size_t>(J) * D, 0.0);
    std::vector<double> dm(static_cast<std::size_t>(I) * D, 0.0);

    // output projection + final norm
    for (int j = 0; j < J; ++j) {
      const double* dz = dlogits[static_cast<std::size_t>(j)].data();
      const double* nFj = &c.nF[static_cast<std::size_t>(j) * D];
      std::vector<double> dn(static_cast<std::size_t>(D), 0.0);
      matvec_t(p + w_out, dz, dn.data(), V, D);
      outer_acc(g + w_out, dz, nFj, V, D);
      for (int t = 0; t < V; ++t) g[b_out + t] += dz[t];
      const double* xfj =
          &c.blocks.back().xf[static_cast<std::size_t>(j) * D];
      rms_backward(xfj, p + gF, c.rF[j], dn.data(),
                   &dstream[static_cast<std::size_t>(j) * D], g + gF, D);
    }

    for (int l = NL - 1; l >= 0; --l) {
      const auto& B = blocks[static_cast<std::size_t>(l)];
      const auto& bc = c.blocks[static_cast<std::size_t>(l)];
      const std::size_t JD = static_cast<std::size_t>(J) * D;

      // ffn backward; dstream currently holds d(xf)
      std::vector<double> dxc = dstream;  // residual carry
      for (int j = 0; j < J; ++j) {
        const double* dxfj = &dstream[static_cast<std::size_t>(j) * D];
        const double* fhj = &bc.fh[static_cast<std::size_t>(j) * F];
        std::vector<double> fhd(static_cast<std::size_t>(F));
        std::vector<double> mask(static_cast<std::size_t>(F));
        for (int f = 0; f < F; ++f) {
          mask[f] = dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 3, j, f,
                                 opt.dropout);
          fhd[f] = fhj[f] * mask[f];
        }
        std::vector<double> dfhd(static_cast<std::size_t>(F), 0.0);
        matvec_t(p + B.wf2, dxfj, dfhd.data(), D, F);
        outer_acc(g + B.wf2, dxfj, fhd.data(), D, F);
        for (int d = 0; d < D; ++d) g[B.bf2 + d] += dxfj[d];
        std::vector<double> dfhpre(static_cast<std::size_t>(F));
        for (int f = 0; f < F; ++f)
          dfhpre[f] = dfhd[f] * mask[f] * (1.0 - fhj[f] * fhj[f]);
        std::vector<double> dn3(static_cast<std::size_t>(D), 0.0);
        matvec_t(p + B.wf1, dfhpre.data(), dn3.data(), F, D);
        outer_acc(g + B.wf1, dfhpre.data(), &bc.n3[static_cast<std::size_t>(j) * D], F,
                  D);
        for (int f = 0; f < F; ++f) g[B.bf1 + f] += dfhpre[f];
        rms_backward(&bc.xc[static_cast<std::size_t>(j) * D], p + B.g3, bc.r3[j],
                     dn3.data(), &dxc[static_cast<std::size_t>(j) * D], g + B.g3, D);
      }

      // cross-attention backward; dxc holds d(xc)
      std::vector<double> dxa = dxc;
      std::vector<double> dck(static_cast<std::size_t>(I) * D, 0.0);
      std::vector<double> dcv(static_cast<std::size_t>(I) * D, 0.0);
      for (int j = 0; j < J; ++j) {
        const double* dxcj = &dxc[static_cast<std::size_t>(j) * D];
        std::vector<double> dco(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d)
          dco[d] = dxcj[d] * dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 2, j,
                                          d, opt.dropout);
        std::vector<double> dcctx(static_cast<std::size_t>(D), 0.0);
        matvec_t(p + B.wco, dco.data(), dcctx.data(), D, D);
        outer_acc(g + B.wco, dco.data(), &bc.cctx[static_cast<std::size_t>(j) * D], D,
                  D);
        const double* wj = &bc.cattw[static_cast<std::size_t>(j) * I];
        std::vector<double> dw(static_cast<std::size_t>(I), 0.0);
        for (int i = 0; i < I; ++i) {
          const double* cvi = &bc.cv[static_cast<std::size_t>(i) * D];
          double s = 0;
          for (int d = 0; d < D; ++d) s += dcctx[d] * cvi[d];
          dw[i] = s;
          for (int d = 0; d < D; ++d)
            dcv[static_cast<std::size_t>(i) * D + d] += wj[i] * dcctx[d];
        }
        double dot = 0;
        for (int i = 0; i < I; ++i) dot += wj[i] * dw[i];
        // recompute cq for this position
        std::vector<double> cq(static_cast<std::size_t>(D), 0.0);
        matvec(p + B.wcq, &bc.n2[static_cast<std::size_t>(j) * D], cq.data(), D, D);
        std::vector<double> dcq(static_cast<std::size_t>(D), 0.0);
        for (int i = 0; i < I; ++i) {
          double ds = wj[i] * (dw[i] - dot) * isq;
          const double* cki = &bc.ck[static_cast<std::size_t>(i) * D];
          for (int d = 0; d < D; ++d) {
            dcq[d] += ds * cki[d];
            dck[static_cast<std::size_t>(i) * D + d] += ds * cq[d];
          }
        }
        std::vector<double> dn2(static_cast<std::size_t>(D), 0.0);
        matvec_t(p + B.wcq, dcq.data(), dn2.data(), D, D);
        outer_acc(g + B.wcq, dcq.data(), &bc.n2[static_cast<std::size_t>(j) * D], D, D);
        rms_backward(&bc.xa[static_cast<std::size_t>(j) * D], p + B.g2, bc.r2[j],
                     dn2.data(), &dxa[static_cast<std::size_t>(j) * D], g + B.g2, D);
      }
      for (int i = 0; i < I; ++i) {
        const double* mi = &c.m[static_cast<std::size_t>(i) * D];
        matvec_t(p + B.wck, &dck[static_cast<std::size_t>(i) * D],
                 &dm[static_cast<std::size_t>(i) * D], D, D);
        outer_acc(g + B.wck, &dck[static_cast<std::size_t>(i) * D], mi, D, D);
        matvec_t(p + B.wcv, &dcv[static_cast<std::size_t>(i) * D],
                 &dm[static_cast<std::size_t>(i) * D], D, D);
        outer_acc(g + B.wcv, &dcv[static_cast<std::size_t>(i) * D], mi, D, D);
      }

      // self-attention backward; dxa holds d(xa)
      std::vector<double> dx = dxa;
      std::vector<double> dq(JD, 0.0), dk(JD, 0.0), dv(JD, 0.0);
      for (int j = 0; j < J; ++j) {
        const double* dxaj = &dxa[static_cast<std::size_t>(j) * D];
        std::vector<double> do_(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d)
          do_[d] = dxaj[d] * dropout_mask(opt.dropout_seed, opt.sent_key, 4 * l + 1, j,
                                          d, opt.dropout);
        std::vector<double> dctx(static_cast<std::size_t>(D), 0.0);
        matvec_t(p + B.wo, do_.data(), dctx.data(), D, D);
        outer_acc(g + B.wo, do_.data(), &bc.ctx[static_cast<std::size_t>(j) * D], D, D);
        const double* wj = &bc.attw[static_cast<std::size_t>(j) * J];
        std::vector<double> dw(static_cast<std::size_t>(j) + 1, 0.0);
        for (int i = 0; i <= j; ++i) {
          const double* vi = &bc.v[static_cast<std::size_t>(i) * D];
          double s = 0;
          for (int d = 0; d < D; ++d) s += dctx[d] * vi[d];
          dw[i] = s;
          for (int d = 0; d < D; ++d)
            dv[static_cast<std::size_t>(i) * D + d] += wj[i] * dctx[d];
        }
        double dot = 0;
        for (int i = 0; i <= j; ++i) dot += wj[i] * dw[i];
        const double* qj = &bc.q[static_cast<std::size_t>(j) * D];
        for (int i = 0; i <= j; ++i) {
          double ds = wj[i] * (dw[i] - dot) * isq;
          const double* ki = &bc.k[static_cast<std::size_t>(i) * D];
          for (int d = 0; d < D; ++d) {
            dq[static_cast<std::size_t>(j) * D + d] += ds * ki[d];
            dk[static_cast<std::size_t>(i) * D + d] += ds * qj[d];
          }
        }
      }
      for (int j = 0; j < J; ++j) {
        std::vector<double> dn1(static_cast<std::size_t>(D), 0.0);
        const double* n1j = &bc.n1[static_cast<std::size_t>(j) * D];
        matvec_t(p + B.wq, &dq[static_cast<std::size_t>(j) * D], dn1.data(), D, D);
        outer_acc(g + B.wq, &dq[static_cast<std::size_t>(j) * D], n1j, D, D);
        matvec_t(p + B.wk, &dk[static_cast<std::size_t>(j) * D], dn1.data(), D, D);
        outer_acc(g + B.wk, &dk[static_cast<std::size_t>(j) * D], n1j, D, D);
        matvec_t(p + B.wv, &dv[static_cast<std::size_t>(j) * D], dn1.data(), D, D);
        outer_acc(g + B.wv, &dv[static_cast<std::size_t>(j) * D], n1j, D, D);
        rms_backward(&bc.xin[static_cast<std::size_t>(j) * D], p + B.g1, bc.r1[j],
                     dn1.data(), &dx[static_cast<std::size_t>(j) * D], g + B.g1, D);
      }
      dstream = std::move(dx);
    }

    // embeddings
    for (int j = 0; j < J; ++j) {
      int in = j == 0 ? Vocab::kBos : pair.target[static_cast<std::size_t>(j) - 1];
      const double* duj = &dstream[static_cast<std::size_t>(j) * D];
      double* de = g + e_tgt + static_cast<std::size_t>(in) * D;
      double* dp = g + p_tgt + static_cast<std::size_t>(j) * D;
      for (int d = 0; d < D; ++d) {
        de[d] += duj[d];
        dp[d] += duj[d];
      }
    }

    // encoder backward
    for (int i = 0; i < I; ++i) {
      std::vector<double> dmhat(static_cast<std::size_t>(D), 0.0);
      rms_backward(&c.mhat[static_cast<std::size_t>(i) * D], p + gB, c.rB[i],
                   &dm[static_cast<std::size_t>(i) * D], dmhat.data(), g + gB, D);
      // f branch
      const double* hi = &c.h[static_cast<std::size_t>(i) * F];
      std::vector<double> mask(static_cast<std::size_t>(F));
      std::vector<double> hd(static_cast<std::size_t>(F));
      for (int f = 0; f < F; ++f) {
        mask[f] = dropout_mask(opt.dropout_seed, opt.sent_key, 0, i, f, opt.dropout);
        hd[f] = hi[f] * mask[f];
      }
      std::vector<double> dhd(static_cast<std::size_t>(F), 0.0);
      matvec_t(p + we2, dmhat.data(), dhd.data(), D, F);
      outer_acc(g + we2, dmhat.data(), hd.data(), D, F);
      for (int d = 0; d < D; ++d) g[be2 + d] += dmhat[d];
      std::vector<double> dhpre(static_cast<std::size_t>(F));
      for (int f = 0; f < F; ++f) dhpre[f] = dhd[f] * mask[f] * (1.0 - hi[f] * hi[f]);
      std::vector<double> dnA(static_cast<std::size_t>(D), 0.0);
      matvec_t(p + we1, dhpre.data(), dnA.data(), F, D);
      outer_acc(g + we1, dhpre.data(), &c.nA[static_cast<std::size_t>(i) * D], F, D);
      for (int f = 0; f < F; ++f) g[be1 + f] += dhpre[f];
      // residual + pre-norm
      std::vector<double> de(static_cast<std::size_t>(D), 0.0);
      for (int d = 0; d < D; ++d) de[d] = dmhat[d];
      rms_backward(&c.e[static_cast<std::size_t>(i) * D], p + gA, c.rA[i], dnA.data(),
                   de.data(), g + gA, D);
      double* dembed = g + e_src + static_cast<std::size_t>(pair.source[i]) * D;
      double* dpos = g + p_src + static_cast<std::size_t>(i) * D;
      for (int d = 0; d < D; ++d) {
        dembed[d] += de[d];
        dpos[d] += de[d];
      }
    }
  }

 private:
  struct BlockOff {
    std::size_t g1, wq, wk, wv, wo, g2, wcq, wck, wcv, wco, g3, wf1, bf1, wf2, bf2;
  };

  void check_ids(const SentencePair& pair) const {
    for (int t : pair.source)
      if (t < 0 || t >= V) throw DataError("source token id out of range");
    for (int t : pair.target)
      if (t < 0 || t >= V) throw DataError("target token id out of range");
  }

  ACache* new_cache(std::unique_ptr<NetCache>* cache) const {
    auto owned = std::make_unique<ACache>();
    ACache* raw = owned.get();
    *cache = std::move(owned);
    return raw;
  }

  int V, D, F, NL, Lmax;
  std::size_t e_src, e_tgt, p_src, p_tgt;
  std::size_t gA, we1, be1, we2, be2, gB;
  std::vector<BlockOff> blocks;
  std::size_t gF, w_out, b_out;
  std::size_t n_params = 0;
};

}  // namespace

std::shared_ptr<const Net> make_attention_net(const ArchSpec& a) {
  return std::make_shared<AttnNet>(a);
}

std::shared_ptr<const Net> make_net(const ArchSpec& a) {
  switch (a.family) {
    case Family::attention: return make_attention_net(a);
    case Family::recurrent: return make_recurrent_net(a);
  }
  throw ConfigError("bad family");
}

}  // namespace ckd

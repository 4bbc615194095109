#pragma once

#include <functional>
#include <vector>

#include "rgbdprior/ddm.hpp"
#include "rgbdprior/optimizer.hpp"
#include "rgbdprior/scene.hpp"

namespace rgbdprior::ddm {

// Gathers corpus records into the network batch layout: channels x (B*P*P),
// block b in columns [b*P*P, (b+1)*P*P).
template <typename S>
MatX<S> corpus_batch(const data::PatchCorpus& corpus,
                     const std::vector<size_t>& indices) {
  check(!indices.empty(), "corpus_batch: empty index list");
  const Eigen::Index per =
      Eigen::Index(corpus.patch_side) * corpus.patch_side;
  MatX<S> x0(4, Eigen::Index(indices.size()) * per);
  for (size_t b = 0; b < indices.size(); ++b) {
    check(indices[b] < corpus.records.size(), "corpus_batch: index out of range");
    const auto& rec = corpus.records[indices[b]];
    x0.middleCols(Eigen::Index(b) * per, per) =
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>>(
            rec.data(), per, 4)
            .template cast<S>()
            .transpose();
  }
  return x0;
}

struct DdmFitConfig {
  int steps = 50000;
  int batch_size = 32;
  double lr = 3e-4;
  uint64_t seed = 1;
  int microbatch = 8;
};

// Denoiser optimization loop over a patch corpus. Each step's batch and noise
// draws come from a stream forked off (seed, global step), so resumed runs
// continue the exact sequence a single long run would have produced.
template <typename S>
class DdmFit {
 public:
  DdmFit(DenoiserNetwork<S>& net, const NoiseSchedule<S>& sched,
         const data::PatchCorpus& corpus, DdmFitConfig cfg)
      : net_(net),
        sched_(sched),
        corpus_(corpus),
        cfg_(cfg),
        optim_(net.param_views(),
               train::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}) {
    check(cfg_.steps > 0 && cfg_.batch_size > 0, "ddm fit: bad configuration");
    check(corpus_.count() > 0, "ddm fit: empty corpus");
  }

  S step(int64_t global_step) {
    Rng rng = Rng(cfg_.seed).fork(0x64646d, uint64_t(global_step));
    std::vector<size_t> idx(size_t(cfg_.batch_size));
    for (auto& i : idx) i = size_t(rng.uniform_int(uint64_t(corpus_.count())));
    const MatX<S> x0 = corpus_batch<S>(corpus_, idx);
    zero_grads(optim_.views());
    const S loss =
        ddm_training_loss(net_, sched_, x0, cfg_.batch_size,
                          corpus_.patch_side, rng, true, cfg_.microbatch);
    if (grads_finite(optim_.views())) {
      clip_grad_norm(optim_.views(), S(kGradClip));
      optim_.step(S(1));
    }
    return loss;
  }

  static constexpr double kGradClip = 10.0;

  // Runs steps [start, start + cfg.steps); reports each step's loss.
  void run(int64_t start,
           const std::function<void(int64_t, double)>& on_step = {}) {
    for (int64_t s = start; s < start + cfg_.steps; ++s) {
      const S loss = step(s);
      if (on_step) on_step(s, double(loss));
    }
  }

 private:
  DenoiserNetwork<S>& net_;
  const NoiseSchedule<S>& sched_;
  const data::PatchCorpus& corpus_;
  DdmFitConfig cfg_;
  train::Adam<S> optim_;
};

}  // namespace rgbdprior::ddm

#include "lacgan/pipeline.hpp"

#include "lacgan/errors.hpp"

namespace lacgan {

Batch make_batch(std::span<const Sample* const> samples, const AURuleTable& rules,
                 std::span<const Au> aus, int roi_size, torch::Dtype dtype) {
  require(!samples.empty(), ErrorKind::Data, "empty batch");
  require(!aus.empty(), ErrorKind::Config, "batch without AUs");
  const ImageSize size = samples.front()->image.size();
  const auto n = static_cast<long>(samples.size());

  Batch batch;
  std::vector<torch::Tensor> images;
  images.reserve(samples.size());
  for (const Sample* s : samples) {
    require(s->image.size() == size, ErrorKind::Shape, "batch images differ in size");
    images.push_back(to_tensor(s->image, dtype));
  }
  batch.images = torch::stack(images);

  batch.regions.resize(aus.size());
  std::vector<std::vector<torch::Tensor>> maps(aus.size());
  for (std::size_t i = 0; i < aus.size(); ++i) {
    auto& r = batch.regions[i];
    r.au = aus[i];
    r.true_pairs = torch::empty({n, 2}, torch::kFloat32);
    r.known = torch::empty({n}, torch::kFloat32);
  }
  for (long b = 0; b < n; ++b) {
    const Sample& s = *samples[b];
    const auto attention = au_attention_maps(s.landmarks, rules, aus, size);
    for (std::size_t i = 0; i < aus.size(); ++i) {
      auto& r = batch.regions[i];
      maps[i].push_back(to_tensor(attention[i], dtype));
      r.mappings.push_back(roi_mapping(support_box(attention[i]), size, roi_size));
      const AuLabel label = s.labels[au_index(aus[i])];
      const auto pair = AuTargetVector::pair(label == AuLabel::Present ? AuState::Present
                                                                       : AuState::Absent);
      r.true_pairs[b][0] = pair[0];
      r.true_pairs[b][1] = pair[1];
      r.known[b] = label == AuLabel::Unknown ? 0.0f : 1.0f;
    }
  }
  for (std::size_t i = 0; i < aus.size(); ++i) {
    auto& r = batch.regions[i];
    r.attention = torch::stack(maps[i]).unsqueeze(1);
    r.gate = (r.attention > 0).to(dtype);
    r.true_pairs = r.true_pairs.to(dtype);
    r.known = r.known.to(dtype);
    r.target_pairs = r.true_pairs.clone();
  }
  return batch;
}

torch::Tensor region_rois(const torch::Tensor& images, const RegionBatch& region) {
  return crop_windows(images * region.attention, region.mappings);
}

torch::Tensor compose(const torch::Tensor& images, std::span<const RegionBatch> regions,
                      std::span<const torch::Tensor> generated) {
  require(regions.size() == generated.size(), ErrorKind::Contract,
          "compose: regions and generated windows differ in count");
  auto total = torch::zeros_like(regions.front().attention);
  auto out = torch::zeros_like(images);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    total = total + regions[i].attention;
    out = out + regions[i].gate * paste_windows(generated[i], regions[i].mappings);
  }
  return out + (1.0 - total) * images;
}

GeneratorOutputs run_generators(LacGanModel& model, const Batch& batch) {
  GeneratorOutputs out;
  for (const auto& region : batch.regions) {
    auto& carg = model.carg(region.au);
    auto roi = region_rois(batch.images, region);
    auto z = encode(carg, roi);
    out.recon.push_back(decode(carg, z, region.true_pairs));
    out.fake.push_back(decode(carg, z, region.target_pairs));
    out.rois.push_back(roi);
    out.z.push_back(z);
  }
  out.composite = compose(batch.images, batch.regions, out.fake);
  return out;
}

}  // namespace lacgan

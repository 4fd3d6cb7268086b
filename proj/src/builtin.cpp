// SPDX-License-Identifier: Apache-2.0
#include "fmstream/builtin.hpp"

namespace fmstream {

namespace {

class Builder {
 public:
  Builder(std::string name, std::string notes, Shape input, int image_stride) {
    net_.name = std::move(name);
    net_.notes = std::move(notes);
    net_.input = input;
    net_.image_stride = image_stride;
  }

  // Adds a BN-folded conv (scale + bias). Returns the new feature-map id.
  int conv(int n_out, int k, int stride, bool relu, std::optional<int> input = std::nullopt,
           std::optional<int> bypass = std::nullopt, int groups = 1, bool scale = true) {
    LayerDescriptor L;
    L.kh = L.kw = k;
    L.n_out = n_out;
    L.stride = stride;
    L.groups = groups;
    L.scale = scale;
    L.bias = true;
    L.relu = relu;
    L.bypass = bypass;
    const int id = net_.layer_count();
    if (input && *input != id - 1) L.input = input;
    net_.layers.push_back(L);
    return id;
  }

  int last() const { return net_.layer_count() - 1; }
  NetworkGraph take() { return std::move(net_); }

 private:
  NetworkGraph net_;
};

void check_resolution(int r, int multiple) {
  if (r < multiple || r % multiple != 0)
    throw Error(ErrorCode::InvalidArgument,
                "resolution must be a positive multiple of " + std::to_string(multiple));
}

NetworkGraph resnet_basic(int r) {
  check_resolution(r, 4);
  Builder b("resnet34-body",
            "ResNet-34 conv2_x..conv5_x; 7x7 stem, max-pool and classifier run off-chip. "
            "Projection shortcuts (1x1, stride 2) on the first block of conv3..conv5; BN folded into scale/bias.",
            Shape{64, r / 4, r / 4}, 4);
  int x = kNetworkInput;
  const int widths[] = {64, 128, 256, 512};
  const int blocks[] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < blocks[s]; ++i) {
      const int c = widths[s];
      if (s > 0 && i == 0) {
        int a = b.conv(c, 3, 2, true, x);
        int p = b.conv(c, 1, 2, false, x);
        x = b.conv(c, 3, 1, true, a, p);
      } else {
        int a = b.conv(c, 3, 1, true, x);
        x = b.conv(c, 3, 1, true, a, x);
      }
    }
  }
  return b.take();
}

NetworkGraph resnet_bottleneck(int r) {
  check_resolution(r, 4);
  Builder b("resnet50-body",
            "ResNet-50 conv2_x..conv5_x (stride on the first 1x1 of each strided block); stem, pooling and "
            "classifier run off-chip. Projection blocks ordered reduce, projection, 3x3, expand.",
            Shape{64, r / 4, r / 4}, 4);
  int x = kNetworkInput;
  const int widths[] = {64, 128, 256, 512};
  const int blocks[] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < blocks[s]; ++i) {
      const int c = widths[s];
      if (i == 0) {
        const int stride = s == 0 ? 1 : 2;
        int red = b.conv(c, 1, stride, true, x);
        int p = b.conv(4 * c, 1, stride, false, x);
        int mid = b.conv(c, 3, 1, true, red);
        x = b.conv(4 * c, 1, 1, true, mid, p);
      } else {
        int red = b.conv(c, 1, 1, true, x);
        int mid = b.conv(c, 3, 1, true, red);
        x = b.conv(4 * c, 1, 1, true, mid, x);
      }
    }
  }
  return b.take();
}

NetworkGraph shufflenet(int r) {
  check_resolution(r, 4);
  Builder b("shufflenet-body",
            "ShuffleNet v1 (g=3) stages 2..4 after the off-chip stem. Channel shuffle is a permutation and is "
            "omitted; the strided unit's average-pool/concat shortcut is replaced by a 1x1 stride-2 projection "
            "so the unit emits the full stage width.",
            Shape{24, r / 4, r / 4}, 4);
  const int g = 3;
  const int widths[] = {240, 480, 960};
  const int units[] = {4, 8, 4};
  int x = kNetworkInput;
  for (int s = 0; s < 3; ++s) {
    const int c = widths[s];
    const int mid = c / 4;
    for (int u = 0; u < units[s]; ++u) {
      if (u == 0) {
        int red = b.conv(mid, 1, 1, true, x, std::nullopt, s == 0 ? 1 : g);
        int dw = b.conv(mid, 3, 2, false, red, std::nullopt, mid);
        int p = b.conv(c, 1, 2, false, x);
        x = b.conv(c, 1, 1, true, dw, p, g);
      } else {
        int red = b.conv(mid, 1, 1, true, x, std::nullopt, g);
        int dw = b.conv(mid, 3, 1, false, red, std::nullopt, mid);
        x = b.conv(c, 1, 1, true, dw, x, g);
      }
    }
  }
  return b.take();
}

NetworkGraph yolov3(int r) {
  check_resolution(r, 32);
  Builder b("yolov3-body",
            "Darknet-53 backbone plus the three YOLOv3 detection heads. Upsample and route-concat are not "
            "supported on-chip: each head's first 1x1 conv reads the backbone route directly (its upsampled "
            "channels are dropped), and the 1x1 route convs feeding the upsamplers are kept as dangling outputs.",
            Shape{3, r, r}, 1);
  int x = b.conv(32, 3, 1, true);
  x = b.conv(64, 3, 2, true, x);
  const int widths[] = {64, 128, 256, 512, 1024};
  const int reps[] = {1, 2, 8, 8, 4};
  int route[5] = {};
  for (int s = 0; s < 5; ++s) {
    const int c = widths[s];
    if (s > 0) x = b.conv(c, 3, 2, true, x);
    for (int i = 0; i < reps[s]; ++i) {
      int a = b.conv(c / 2, 1, 1, true, x);
      x = b.conv(c, 3, 1, true, a, x);
    }
    route[s] = x;
  }
  for (int h = 0; h < 3; ++h) {
    const int c = widths[4 - h];
    int y = route[4 - h];
    int branch = y;
    for (int i = 0; i < 3; ++i) {
      int a = b.conv(c / 2, 1, 1, true, y);
      if (i == 2) branch = a;
      y = b.conv(c, 3, 1, true, a);
    }
    b.conv(255, 1, 1, false, y, std::nullopt, 1, false);
    if (h < 2) b.conv(c / 4, 1, 1, true, branch);
  }
  return b.take();
}

}  // namespace

NetworkGraph resnet34_body(int resolution) { return resnet_basic(resolution); }
NetworkGraph resnet50_body(int resolution) { return resnet_bottleneck(resolution); }
NetworkGraph shufflenet_body(int resolution) { return shufflenet(resolution); }
NetworkGraph yolov3_body(int resolution) { return yolov3(resolution); }

std::vector<std::string> builtin_names() { return {"resnet34", "resnet50", "shufflenet", "yolov3"}; }

int builtin_default_resolution(const std::string& name) { return name == "yolov3" ? 320 : 224; }

NetworkGraph builtin_network(const std::string& name, int resolution) {
  if (name == "resnet34") return resnet34_body(resolution);
  if (name == "resnet50") return resnet50_body(resolution);
  if (name == "shufflenet") return shufflenet_body(resolution);
  if (name == "yolov3") return yolov3_body(resolution);
  throw Error(ErrorCode::InvalidArgument, "unknown built-in network '" + name + "'");
}

}  // namespace fmstream

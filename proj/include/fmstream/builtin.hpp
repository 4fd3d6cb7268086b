// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fmstream/network.hpp"

namespace fmstream {

// Bundled network bodies, parameterized by image resolution (square).
// resnet34/resnet50/shufflenet start after the stem (input at resolution/4);
// yolov3 starts at the image.
NetworkGraph resnet34_body(int resolution = 224);
NetworkGraph resnet50_body(int resolution = 224);
NetworkGraph shufflenet_body(int resolution = 224);
NetworkGraph yolov3_body(int resolution = 320);

std::vector<std::string> builtin_names();
// Throws InvalidArgument for unknown names.
NetworkGraph builtin_network(const std::string& name, int resolution);
int builtin_default_resolution(const std::string& name);

}  // namespace fmstream

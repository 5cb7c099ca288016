#pragma once

namespace qgcoc::strategy {

// Default definitions for every built-in strategy, kept as data so a run can
// swap any of them out via the template-override file (same schema). The
// prompt wordings are project reconstructions; treat them as a starting
// point, not gospel.
//
// Stage fields: name, template, image_binding (none | all_images | each_image
// | each_subquestion_with_all_images), route_role (stage_one | answerer,
// default stage_one), output_role, parser (raw_text | numbered_list, default
// raw_text).
inline constexpr const char* kBuiltinStrategyData = R"json({
  "direct": {
    "stages": [],
    "final_template": "Question: {{question}}\n{{options}}\n\nAnswer the question using the given images. Reply with the letter of the correct option."
  },
  "caption": {
    "stages": [
      {
        "name": "caption",
        "template": "This is image {{image_index}} of {{image_count}}. Describe this image in detail.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "qg_caption": {
    "stages": [
      {
        "name": "guided_caption",
        "template": "This is image {{image_index}} of {{image_count}}. Question: {{question}}\nDescribe this image in detail, focusing on the details needed to answer the question.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nQuestion-guided image captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "ddcot": {
    "stages": [
      {
        "name": "decompose",
        "template": "Question: {{question}}\n\nBreak the question down into a numbered list of simpler sub-questions that must be answered to solve it. Reply with the numbered list only.",
        "image_binding": "all_images",
        "output_role": "subquestions",
        "parser": "numbered_list"
      },
      {
        "name": "subanswer",
        "template": "Look at the images and answer this sub-question concisely.\nSub-question: {{subquestion}}",
        "image_binding": "each_subquestion_with_all_images",
        "output_role": "subanswers"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nRationale from sub-questions:\n{{qa_pairs}}\n\nUsing the rationale and the images, answer the question. Reply with the letter of the correct option."
  },
  "ccot": {
    "stages": [
      {
        "name": "scene_graph",
        "template": "This is image {{image_index}} of {{image_count}}. Question: {{question}}\n\nGenerate a scene graph for this image: list the objects, their attributes, and the relationships between them that matter for the question.",
        "image_binding": "each_image",
        "output_role": "scene_graphs"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nScene graphs:\n{{scene_graphs}}\n\nUsing the scene graphs and the images, answer the question. Reply with the letter of the correct option."
  },
  "cocot": {
    "min_images": 2,
    "stages": [
      {
        "name": "compare",
        "template": "You are given {{image_count}} images. Describe the similarities and differences between them.",
        "image_binding": "all_images",
        "output_role": "comparison"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nSimilarities and differences between the images:\n{{comparison}}\n\nUsing this comparison and the images, answer the question. Reply with the letter of the correct option."
  },
  "qg_coc": {
    "stages": [
      {
        "name": "decompose",
        "template": "Question: {{question}}\n\nBreak the question down into a numbered list of simpler sub-questions about the images that must be answered to solve it. Reply with the numbered list only.",
        "image_binding": "all_images",
        "output_role": "subquestions",
        "parser": "numbered_list"
      },
      {
        "name": "caption",
        "template": "Look at the images. Caption the key visual information needed to answer this sub-question.\nSub-question: {{subquestion}}",
        "image_binding": "each_subquestion_with_all_images",
        "output_role": "captions"
      },
      {
        "name": "subanswer",
        "template": "Captions of key visual information:\n{{captions}}\n\nSub-question: {{subquestion}}\nAnswer the sub-question using the captions and the images.",
        "image_binding": "each_subquestion_with_all_images",
        "output_role": "subanswers"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nSub-question and answer pairs:\n{{qa_pairs}}\n\nUsing the pairs as prior knowledge, answer the original question. Reply with the letter of the correct option."
  },
  "decompose_only": {
    "stages": [
      {
        "name": "decompose",
        "template": "Question: {{question}}\n\nBreak the question down into a numbered list of simpler sub-questions about the images that must be answered to solve it. Reply with the numbered list only.",
        "image_binding": "all_images",
        "output_role": "subquestions",
        "parser": "numbered_list"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nSub-questions to consider:\n{{subquestions}}\n\nUsing the sub-questions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_concise_summarized_unguided": {
    "stages": [
      {
        "name": "caption",
        "template": "You are given {{image_count}} images. Write one concise sentence summarizing the content of the whole image set.",
        "image_binding": "all_images",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_concise_summarized_guided": {
    "stages": [
      {
        "name": "caption",
        "template": "You are given {{image_count}} images. Question: {{question}}\nWrite one concise sentence summarizing the content of the whole image set, focusing on what is needed to answer the question.",
        "image_binding": "all_images",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_concise_individual_unguided": {
    "stages": [
      {
        "name": "caption",
        "template": "This is image {{image_index}} of {{image_count}}. Describe this image in one concise sentence.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_concise_individual_guided": {
    "stages": [
      {
        "name": "caption",
        "template": "This is image {{image_index}} of {{image_count}}. Question: {{question}}\nDescribe this image in one concise sentence, focusing on what is needed to answer the question.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_detailed_summarized_unguided": {
    "stages": [
      {
        "name": "caption",
        "template": "You are given {{image_count}} images. Write one detailed caption summarizing the content of the whole image set.",
        "image_binding": "all_images",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_detailed_summarized_guided": {
    "stages": [
      {
        "name": "caption",
        "template": "You are given {{image_count}} images. Question: {{question}}\nWrite one detailed caption summarizing the content of the whole image set, focusing on what is needed to answer the question.",
        "image_binding": "all_images",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_detailed_individual_unguided": {
    "stages": [
      {
        "name": "caption",
        "template": "This is image {{image_index}} of {{image_count}}. Describe this image in detail.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  },
  "grid_detailed_individual_guided": {
    "stages": [
      {
        "name": "caption",
        "template": "This is image {{image_index}} of {{image_count}}. Question: {{question}}\nDescribe this image in detail, focusing on what is needed to answer the question.",
        "image_binding": "each_image",
        "output_role": "captions"
      }
    ],
    "final_template": "Question: {{question}}\n{{options}}\n\nImage captions:\n{{captions}}\n\nUsing the captions and the images, answer the question. Reply with the letter of the correct option."
  }
})json";

}  // namespace qgcoc::strategy

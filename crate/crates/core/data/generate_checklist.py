"""Regenerates discharged_v46.json. Run from any directory: python3 generate_checklist.py"""
import json
components = [
 ("D1","Demographic Information",3,1),
 ("I","Important Alerts",3,1),
 ("S","Social Set up",2,1),
 ("C","Comprehensive Medical History",4,2),
 ("H","History & Examinations",8,3),
 ("A","Assessment & Clinical Course",8,4),
 ("R","Recorded Medication Changes",6,5),
 ("G","Goals of Care",1,2),
 ("E","Expected Follow-up",3,2),
 ("D2","Discharge-related Information",8,6),
]
qs = {
"D1": [
 ("Patient identity","Is the patient's name documented (a de-identified placeholder counts as documented)?",None),
 ("Patient identity","Is the patient's age or date of birth documented?",None),
 ("Document placement","Is a patient or admission identifier documented that places this summary within the correct hospital encounter?",None)],
"I": [
 ("Allergies","Are the patient's allergies, or an explicit statement of no known allergies, documented?",None),
 ("Clinical risks","Are clinical risks that require attention after discharge (for example fall, bleeding, or infection risk) documented?",None),
 ("Precautions","Are precautions or safety alerts for post-discharge care (for example activity restrictions or isolation) documented?",None)],
"S": [
 ("Lifestyle habits","Are the patient's lifestyle habits (tobacco, alcohol, or substance use) documented?",None),
 ("Social status","Is the patient's pre-hospitalization functional status and social situation (living arrangement, caregivers, baseline independence) documented?","Pre-hospitalization functional status")],
"C": [
 ("Previous diagnoses","Are the patient's previous diagnoses (past medical history) documented?",None),
 ("Previous diagnoses","Is the patient's past surgical or procedural history documented?",None),
 ("Pre-admission medications","Is a list of the patient's pre-admission (home) medications documented?",None),
 ("Pre-admission medications","Are doses and frequencies documented for the pre-admission medications?",None)],
"H": [
 ("Admission reasons","Is the source of referral or mode of admission (for example emergency department, transfer, or elective) documented?","Source of referral / mode of admission"),
 ("Admission reasons","Is the chief complaint or primary reason for admission documented?",None),
 ("Admission reasons","Is the history of present illness documented?",None),
 ("Vital signs","Are the patient's vital signs at admission documented?",None),
 ("Physical exams","Is a physical examination at admission documented?",None),
 ("Physical exams","Are pertinent laboratory results from the admission documented?",None),
 ("Physical exams","Are pertinent imaging or diagnostic study results documented?",None),
 ("Vital signs","Are vital signs or physical examination findings at discharge documented?",None)],
"A": [
 ("Diagnoses","Is the principal diagnosis for this admission documented?",None),
 ("Severity","Is the severity of the main diagnoses, or any complication arising from them, documented?","Severity/complication of main diagnoses"),
 ("Diagnoses","Are secondary or comorbid diagnoses that were addressed during the stay documented?",None),
 ("Hospital course","Is a narrative of the hospital course documented?",None),
 ("Management","Are the key treatments and management provided during the stay documented?",None),
 ("Management","Are procedures performed during the admission documented, or is it stated that none were performed?",None),
 ("Management","Are consultations by other services documented?",None),
 ("Hospital course","Are problems that remain unresolved at discharge documented?",None)],
"R": [
 ("Rationale for changes","For every medication change listed, is the specific clinical rationale for that change documented?",None),
 ("Rationale for changes","Is a complete discharge medication list documented?",None),
 ("Rationale for changes","Are newly started medications explicitly identified as new?",None),
 ("Rationale for changes","Are stopped or held medications explicitly identified?",None),
 ("Purposes","Is the purpose (indication) of each new or changed medication documented?",None),
 ("Restart plans","For medications that were held, is a plan for whether and when to restart them documented?",None)],
"G": [
 ("Advance directives","Are the patient's goals of care, advance directives, code status, or serious illness conversations documented?","Goals of care / advance directives")],
"E": [
 ("PCP contact","Is the contact information for the Primary Care Provider (PCP) listed in the summary?","PCP contact information"),
 ("Instructions","Are follow-up appointments or instructions (with whom and when) documented?",None),
 ("Outpatient investigations","Are outpatient investigations or pending results that require follow-up documented?",None)],
"D2": [
 ("Discharge date","Is the discharge date documented?",None),
 ("Discharge date","Is the admission date documented?",None),
 ("Disposition","Is the discharge disposition (destination such as home or a rehabilitation facility) documented?",None),
 ("Specialty","Is the discharging specialty or service documented?",None),
 ("Writer info","Is the attending physician responsible for the admission documented?",None),
 ("Writer info","Is the name or role of the author of the discharge summary documented?",None),
 ("Disposition","Are the discharge instructions given to the patient documented?",None),
 ("Disposition","Are the patient's mental status, level of consciousness, and activity status at discharge documented?",None)],
}
out = {
 "name": "DISCHARGED",
 "version": "discharged-46.v1",
 "profile": "DISCHARGED",
 "notice": "Question texts are reconstructions authored from the component topics; only the PCP-contact (E.01) and medication-rationale (R.01) questions are verbatim. report_label values map questions onto commonly reported element names and are provisional.",
 "batch_count": 6,
 "components": [{"code":c,"title":t,"expected_count":n} for c,t,n,_ in components],
 "questions": [],
}
for c,t,n,b in components:
    assert len(qs[c])==n
    for i,(topic,text,label) in enumerate(qs[c],1):
        q = {"id": f"{c}.{i:02d}", "component": c, "topic": topic, "text": text, "batch_id": b}
        if label: q["report_label"] = label
        out["questions"].append(q)
assert len(out["questions"])==46
import os
path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "discharged_v46.json")
with open(path, "w") as f:
    json.dump(out, f, indent=2, ensure_ascii=False)

